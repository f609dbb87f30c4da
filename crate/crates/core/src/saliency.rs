//! Saliency densities and the standard saliency evaluation metrics.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_splat, normalize, sigma_to_pixels, to_pixel, DensityMap, GazeFrame, Heatmap};

/// Floor used inside every log-based metric.
pub const METRIC_EPS: f64 = 1e-8;

/// Width of the centred Gaussian prior, as a fraction of the image diagonal.
pub const CENTER_PRIOR_SIGMA: f64 = 0.25;

/// Parameters of the computed (center-surround + center prior) saliency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyParams {
    /// Mixing weight of the center prior, in `[0,1]`.
    pub prior_weight: f64,
    /// Fine box-blur radius as a fraction of `min(W, H)`.
    pub fine_scale: f64,
    /// Coarse box-blur radius as a fraction of `min(W, H)`.
    pub coarse_scale: f64,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        Self {
            prior_weight: 0.2,
            fine_scale: 0.015,
            coarse_scale: 0.06,
        }
    }
}

/// Where saliency maps come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SaliencyProvider {
    Computed(SaliencyParams),
    /// One `sal_{frame:06}.pgm` per frame, renormalized on load.
    FileBacked(PathBuf),
}

impl SaliencyProvider {
    pub fn density(&self, frame_index: usize, frame: &Heatmap) -> Result<DensityMap> {
        match self {
            SaliencyProvider::Computed(params) => compute_saliency(frame, params),
            SaliencyProvider::FileBacked(dir) => {
                let path = dir.join(format!("sal_{frame_index:06}.pgm"));
                let map = crate::io::read_heatmap_pgm(&path)?;
                map.check_dims(frame.width(), frame.height())?;
                normalize(&map)
            }
        }
    }
}

/// Centred isotropic Gaussian density with σ = 0.25 of the diagonal.
pub fn center_prior(width: usize, height: usize) -> DensityMap {
    let sigma = sigma_to_pixels(CENTER_PRIOR_SIGMA, width, height);
    let cx = (width - 1) as f64 / 2.0;
    let cy = (height - 1) as f64 / 2.0;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let map = Heatmap::from_fn(width, height, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        (-(dx * dx + dy * dy) * inv).exp()
    });
    normalize(&map).expect("gaussian prior has positive mass")
}

/// Mean over the `(2r+1)²` window, shrunk at the border.
fn box_blur(img: &Heatmap, r: usize) -> Heatmap {
    let (w, h) = img.dims();
    // summed-area table with a zero row/column in front
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += img.get(x, y);
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    Heatmap::from_fn(w, h, |x, y| {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(w);
        let y1 = (y + r + 1).min(h);
        let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
            + sat[y0 * (w + 1) + x0];
        s / ((x1 - x0) * (y1 - y0)) as f64
    })
}

/// Center-surround contrast (difference of a fine and a coarse box blur) blended
/// with the centre prior. A frame without contrast yields the pure prior.
pub fn compute_saliency(frame: &Heatmap, params: &SaliencyParams) -> Result<DensityMap> {
    let (w, h) = frame.dims();
    if w < 16 || h < 16 {
        return Err(Error::Invalid(format!(
            "saliency needs frames of at least 16x16, got {w}x{h}"
        )));
    }
    if !(0.0..=1.0).contains(&params.prior_weight) {
        return Err(Error::Invalid("prior_weight must be in [0,1]".into()));
    }
    let short = w.min(h) as f64;
    let fine = ((params.fine_scale * short).round() as usize).max(1);
    let coarse = ((params.coarse_scale * short).round() as usize).max(2 * fine);
    let a = box_blur(frame, fine);
    let b = box_blur(frame, coarse);
    let contrast = Heatmap::from_vec(
        w,
        h,
        a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).collect(),
    )?;
    let prior = center_prior(w, h);
    let scale = frame.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if contrast.max() <= 1e-12 * scale {
        return Ok(prior);
    }
    let contrast = normalize(&contrast)?;
    let wp = params.prior_weight;
    let mixed = Heatmap::from_vec(
        w,
        h,
        contrast
            .data()
            .iter()
            .zip(prior.data())
            .map(|(c, p)| (1.0 - wp) * c + wp * p)
            .collect(),
    )?;
    normalize(&mixed)
}

/// `(1 − λ)·saliency + λ·splat(noisy gaze)`. Without valid gaze the saliency is returned.
pub fn gaze_conditioned_density(
    saliency: &DensityMap,
    noisy_gaze: &GazeFrame,
    lambda: f64,
    kernel_sigma: f64,
) -> Result<DensityMap> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("lambda must be in [0,1], got {lambda}")));
    }
    if noisy_gaze.valid_count() == 0 || lambda == 0.0 {
        return Ok(saliency.clone());
    }
    let splat = gaussian_splat(noisy_gaze, kernel_sigma, saliency.width(), saliency.height())?;
    if lambda == 1.0 {
        return Ok(splat);
    }
    let data = saliency
        .data()
        .iter()
        .zip(splat.data())
        .map(|(s, g)| (1.0 - lambda) * s + lambda * g)
        .collect();
    normalize(&Heatmap::from_vec(saliency.width(), saliency.height(), data)?)
}

fn same_dims(a: &Heatmap, b: &Heatmap) -> Result<()> {
    b.check_dims(a.width(), a.height())
}

/// `KL(truth ‖ pred) = Σ truth · ln((truth + ε)/(pred + ε))`.
pub fn kl_divergence(truth: &DensityMap, pred: &DensityMap) -> Result<f64> {
    same_dims(truth, pred)?;
    Ok(truth
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&t, &p)| t * ((t + METRIC_EPS) / (p + METRIC_EPS)).ln())
        .sum())
}

/// Pearson correlation of pixel values.
pub fn cross_correlation(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// One ground-truth fixation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

/// Ground-truth fixations, normalized coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixationSet {
    fixations: Vec<Fixation>,
}

impl FixationSet {
    pub fn new(fixations: Vec<Fixation>) -> Result<Self> {
        for f in &fixations {
            if !(0.0..=1.0).contains(&f.x) || !(0.0..=1.0).contains(&f.y) {
                return Err(Error::Invalid(format!(
                    "fixation ({}, {}) outside [0,1]²",
                    f.x, f.y
                )));
            }
        }
        Ok(Self { fixations })
    }

    /// Every valid point of every frame.
    pub fn from_gaze(gaze: &[GazeFrame]) -> Self {
        let fixations = gaze
            .iter()
            .flat_map(|g| {
                g.valid_points().map(move |p| Fixation {
                    frame: g.frame_index,
                    x: p[0],
                    y: p[1],
                })
            })
            .collect();
        Self { fixations }
    }

    pub fn fixations(&self) -> &[Fixation] {
        &self.fixations
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn for_frame(&self, frame: usize) -> FixationSet {
        FixationSet {
            fixations: self
                .fixations
                .iter()
                .filter(|f| f.frame == frame)
                .copied()
                .collect(),
        }
    }
}

fn nearest_pixel(map: &Heatmap, f: &Fixation) -> f64 {
    let x = to_pixel(f.x, map.width()).round() as usize;
    let y = to_pixel(f.y, map.height()).round() as usize;
    map.get(x.min(map.width() - 1), y.min(map.height() - 1))
}

/// Mean over fixations of `log2(pred + ε) − log2(baseline + ε)` at the fixated pixel.
pub fn information_gain(pred: &DensityMap, fixations: &FixationSet, baseline: &DensityMap) -> Result<f64> {
    same_dims(pred, baseline)?;
    if fixations.is_empty() {
        return Err(Error::EmptyFixations);
    }
    let total: f64 = fixations
        .fixations()
        .iter()
        .map(|f| {
            (nearest_pixel(pred, f) + METRIC_EPS).log2()
                - (nearest_pixel(baseline, f) + METRIC_EPS).log2()
        })
        .sum();
    Ok(total / fixations.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_density(rng: &mut impl Rng, w: usize, h: usize) -> DensityMap {
        normalize(&Heatmap::from_fn(w, h, |_, _| rng.gen::<f64>() + 1e-3)).unwrap()
    }

    #[test]
    fn constant_frame_gives_center_prior() {
        let frame = Heatmap::filled(33, 21, 0.4);
        let s = compute_saliency(&frame, &SaliencyParams::default()).unwrap();
        assert_eq!(s.argmax(), (16, 10));
        assert!(s.is_valid());
    }

    #[test]
    fn bright_blob_wins() {
        let (w, h) = (100, 60);
        let cx = (0.7 * (w - 1) as f64).round() as usize;
        let cy = (0.3 * (h - 1) as f64).round() as usize;
        let frame = Heatmap::from_fn(w, h, |x, y| {
            if x.abs_diff(cx) <= 2 && y.abs_diff(cy) <= 2 {
                1.0
            } else {
                0.0
            }
        });
        let s = compute_saliency(&frame, &SaliencyParams::default()).unwrap();
        assert!((s.sum() - 1.0).abs() < 1e-6);
        // grid argmax oracle
        let mut best = (0, 0);
        for y in 0..h {
            for x in 0..w {
                if s.get(x, y) > s.get(best.0, best.1) {
                    best = (x, y);
                }
            }
        }
        assert!(best.0.abs_diff(cx) <= 2 && best.1.abs_diff(cy) <= 2, "{best:?}");
    }

    #[test]
    fn small_frames_rejected() {
        assert!(compute_saliency(&Heatmap::zeros(8, 32), &SaliencyParams::default()).is_err());
    }

    #[test]
    fn conditioned_degenerate_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sal = random_density(&mut rng, 20, 12);
        let g = GazeFrame::single(0, 0.3, 0.6);
        assert_eq!(gaze_conditioned_density(&sal, &g, 0.0, 0.05).unwrap(), sal);
        let splat = gaussian_splat(&g, 0.05, 20, 12).unwrap();
        assert_eq!(gaze_conditioned_density(&sal, &g, 1.0, 0.05).unwrap(), splat);
        assert_eq!(gaze_conditioned_density(&sal, &GazeFrame::blink(0), 0.5, 0.05).unwrap(), sal);
    }

    #[test]
    fn conditioned_argmax_between_modes() {
        let (w, h) = (61, 31);
        let a = GazeFrame::single(0, 0.3, 0.5);
        let b = GazeFrame::single(0, 0.5, 0.5);
        let sigma = 0.08;
        let sal = gaussian_splat(&a, sigma, w, h).unwrap();
        let mixed = gaze_conditioned_density(&sal, &b, 0.5, sigma).unwrap();
        let (ax, ay) = mixed.argmax();
        let (xa, xb) = (0.3 * 60.0, 0.5 * 60.0);
        assert_eq!(ay, 15);
        assert!(ax as f64 >= xa && ax as f64 <= xb, "{ax}");
    }

    #[test]
    fn conditioned_affine_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sal = random_density(&mut rng, 16, 16);
        let g = GazeFrame::single(0, 0.4, 0.4);
        let at = |l| gaze_conditioned_density(&sal, &g, l, 0.05).unwrap();
        let (m0, m1, mh) = (at(0.0), at(1.0), at(0.3));
        for i in 0..m0.len() {
            let expect = 0.7 * m0.data()[i] + 0.3 * m1.data()[i];
            assert!((mh.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_density(&mut rng, 8, 8);
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-6);
        let mut delta = Heatmap::zeros(4, 4);
        delta.set(2, 1, 1.0);
        let delta = normalize(&delta).unwrap();
        let uni = DensityMap::uniform(4, 4);
        // direct summation oracle
        let mut direct = 0.0;
        for (&t, &q) in delta.data().iter().zip(uni.data()) {
            direct += t * ((t + 1e-8) / (q + 1e-8)).ln();
        }
        let kl = kl_divergence(&delta, &uni).unwrap();
        assert!((kl - direct).abs() < 1e-12);
        assert!((kl - 16f64.ln()).abs() < 1e-6);
        for _ in 0..100 {
            let a = random_density(&mut rng, 6, 5);
            let b = random_density(&mut rng, 6, 5);
            assert!(kl_divergence(&a, &b).unwrap() >= -1e-7);
        }
        assert!(kl_divergence(&p, &DensityMap::uniform(4, 4)).is_err());
    }

    #[test]
    fn cc_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_density(&mut rng, 10, 10);
        assert!((cross_correlation(&p, &p).unwrap() - 1.0).abs() < 1e-9);
        let anti = p.map(|v| 0.3 - v);
        assert!((cross_correlation(&p, &anti).unwrap() + 1.0).abs() < 1e-9);
        assert!(matches!(
            cross_correlation(&p, &Heatmap::filled(10, 10, 1.0)),
            Err(Error::ZeroVariance)
        ));
        let mut mean_abs = 0.0;
        for _ in 0..50 {
            let a = Heatmap::from_fn(32, 32, |_, _| rng.gen());
            let b = Heatmap::from_fn(32, 32, |_, _| rng.gen());
            mean_abs += cross_correlation(&a, &b).unwrap().abs() / 50.0;
        }
        assert!(mean_abs < 0.2, "{mean_abs}");
    }

    #[test]
    fn ig_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = random_density(&mut rng, 8, 8);
        let fix: Vec<Fixation> = (0..10)
            .map(|_| Fixation {
                frame: 0,
                x: rng.gen(),
                y: rng.gen(),
            })
            .collect();
        let fs = FixationSet::new(fix.clone()).unwrap();
        assert!(information_gain(&base, &fs, &base).unwrap().abs() < 1e-9);

        // pred doubles the baseline at every fixated pixel
        let uni = DensityMap::uniform(8, 8);
        let mut doubled = Heatmap::filled(8, 8, 1.0 / 64.0);
        let one = [Fixation { frame: 0, x: 0.0, y: 0.0 }];
        doubled.set(0, 0, 2.0 / 64.0);
        let rest = (1.0 - 2.0 / 64.0) / 63.0;
        for (i, v) in doubled.data_mut().iter_mut().enumerate() {
            if i != 0 {
                *v = rest;
            }
        }
        let pred = normalize(&doubled).unwrap();
        let ig = information_gain(&pred, &FixationSet::new(one.to_vec()).unwrap(), &uni).unwrap();
        assert!((ig - 1.0).abs() < 1e-6, "{ig}");

        // independent re-implementation
        let pred = random_density(&mut rng, 8, 8);
        let mut sum = 0.0;
        for f in &fix {
            let px = (f.x * 7.0).round() as usize;
            let py = (f.y * 7.0).round() as usize;
            let i = py * 8 + px;
            sum += ((pred.data()[i] + 1e-8) / (base.data()[i] + 1e-8)).log2();
        }
        let ig = information_gain(&pred, &fs, &base).unwrap();
        assert!((ig - sum / 10.0).abs() < 1e-12);
        assert!(matches!(
            information_gain(&pred, &FixationSet::default(), &base),
            Err(Error::EmptyFixations)
        ));
    }
}
