//! Gaze corruption models, meanshift denoising and recalibration with a small
//! correction network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sigma_to_pixels, to_pixel, DensityMap, GazeFrame, Heatmap, GAZE_SLOTS};
use crate::par::{derive_seed, par_map};
use crate::saliency::gaze_conditioned_density;

// ---------------------------------------------------------------------------
// noise

/// Spatially varying white noise: per coordinate `σ = max(σ_n, w·|x − x0|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_n: f64,
    pub w: f64,
    pub center: [f64; 2],
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma_n: f64, w: f64, seed: u64) -> Result<Self> {
        let m = Self {
            sigma_n,
            w,
            center: [0.5, 0.5],
            seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_n >= 0.0 && self.w >= 0.0 && self.sigma_n.is_finite() && self.w.is_finite()) {
            return Err(Error::Invalid("noise needs finite sigma_n ≥ 0 and w ≥ 0".into()));
        }
        Ok(())
    }

    /// Noise std for each coordinate of `p`.
    pub fn sigma_at(&self, p: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|i| self.sigma_n.max(self.w * (p[i] - self.center[i]).abs()))
    }

    /// `p` plus one noise draw, without clamping.
    pub fn perturb(&self, p: [f64; 2], rng: &mut ChaCha8Rng) -> [f64; 2] {
        let s = self.sigma_at(p);
        [0, 1].map(|i| {
            if s[i] == 0.0 {
                p[i]
            } else {
                p[i] + Normal::new(0.0, s[i]).expect("finite std").sample(rng)
            }
        })
    }
}

/// Adds noise to every valid point and clamps to `[0,1]`. Reproducible from the model's seed.
pub fn apply_noise(gaze: &[GazeFrame], model: &NoiseModel) -> Result<Vec<GazeFrame>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    Ok(gaze
        .iter()
        .map(|g| {
            let mut out = *g;
            for k in 0..GAZE_SLOTS {
                if g.valid[k] {
                    out.points[k] = model.perturb(g.points[k], &mut rng).map(|v| v.clamp(0.0, 1.0));
                }
            }
            out
        })
        .collect())
}

// ---------------------------------------------------------------------------
// affine calibration

/// `x ↦ A·x + b` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2D {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Affine2D {
    pub const IDENTITY: Affine2D = Affine2D {
        a: [[1.0, 0.0], [0.0, 1.0]],
        b: [0.0, 0.0],
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.b[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.b[1],
        ]
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    pub fn inverse(&self) -> Result<Affine2D> {
        let d = self.det();
        let scale = self.a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if !d.is_finite() || d.abs() <= 1e-12 * scale * scale.max(1.0) {
            return Err(Error::Singular);
        }
        let a = [
            [self.a[1][1] / d, -self.a[0][1] / d],
            [-self.a[1][0] / d, self.a[0][0] / d],
        ];
        let b = [
            -(a[0][0] * self.b[0] + a[0][1] * self.b[1]),
            -(a[1][0] * self.b[0] + a[1][1] * self.b[1]),
        ];
        Ok(Affine2D { a, b })
    }

    /// The six parameters in the order `a00, a01, a10, a11, b0, b1`.
    pub fn elements(&self) -> [f64; 6] {
        [self.a[0][0], self.a[0][1], self.a[1][0], self.a[1][1], self.b[0], self.b[1]]
    }

    /// Identity plus elementwise zero-mean Gaussian noise of std `sigma_n`.
    pub fn random_corruption(sigma_n: f64, seed: u64) -> Result<Affine2D> {
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::Invalid("sigma_n must be finite and ≥ 0".into()));
        }
        if sigma_n == 0.0 {
            return Ok(Self::IDENTITY);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma_n).expect("finite std");
        let mut e = [0.0; 6];
        for v in &mut e {
            *v = n.sample(&mut rng);
        }
        Ok(Affine2D {
            a: [[1.0 + e[0], e[1]], [e[2], 1.0 + e[3]]],
            b: [e[4], e[5]],
        })
    }
}

/// Maps every valid point through `t`, clamping the result to `[0,1]`.
pub fn corrupt_with(gaze: &[GazeFrame], t: &Affine2D) -> Vec<GazeFrame> {
    gaze.iter()
        .map(|g| {
            let mut out = *g;
            for k in 0..GAZE_SLOTS {
                if g.valid[k] {
                    out.points[k] = t.apply(g.points[k]).map(|v| v.clamp(0.0, 1.0));
                }
            }
            out
        })
        .collect()
}

/// Draws a random miscalibration and applies it to the sequence.
pub fn apply_affine_corruption(gaze: &[GazeFrame], sigma_n: f64, seed: u64) -> Result<(Vec<GazeFrame>, Affine2D)> {
    let t = Affine2D::random_corruption(sigma_n, seed)?;
    Ok((corrupt_with(gaze, &t), t))
}

// ---------------------------------------------------------------------------
// meanshift

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftConfig {
    pub bandwidth_px: f64,
    pub max_iterations: usize,
    pub epsilon_px: f64,
}

impl MeanShiftConfig {
    /// Bandwidth `max(σ_n, floor)·√(W² + H²)` with the default iteration cap and tolerance.
    pub fn for_noise(sigma_n: f64, floor: f64, width: usize, height: usize) -> Self {
        Self {
            bandwidth_px: sigma_to_pixels(sigma_n.max(floor), width, height),
            max_iterations: 100,
            epsilon_px: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_px > 0.0 && self.bandwidth_px.is_finite() && self.epsilon_px > 0.0) {
            return Err(Error::Invalid("meanshift needs a positive bandwidth and tolerance".into()));
        }
        Ok(())
    }
}

/// Kernel-weighted mean of pixel positions around `x`. Returns `None` without mass.
fn shift_target(x: [f64; 2], density: &Heatmap, h: f64) -> Option<[f64; 2]> {
    let (w, ht) = density.dims();
    let reach = 5.0 * h;
    let cols = (x[0] - reach).floor().max(0.0) as usize..((x[0] + reach).ceil() as usize + 1).min(w);
    let rows = (x[1] - reach).floor().max(0.0) as usize..((x[1] + reach).ceil() as usize + 1).min(ht);
    let inv = -0.5 / (h * h);
    let kx: Vec<f64> = cols.clone().map(|i| (inv * (i as f64 - x[0]).powi(2)).exp()).collect();
    let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
    for j in rows {
        let ky = (inv * (j as f64 - x[1]).powi(2)).exp();
        let row = &density.data()[j * w..(j + 1) * w];
        let (mut s, mut sx) = (0.0, 0.0);
        for (k, i) in cols.clone().enumerate() {
            let v = kx[k] * row[i];
            s += v;
            sx += v * i as f64;
        }
        m += ky * s;
        mx += ky * sx;
        my += ky * s * j as f64;
    }
    (m > 0.0 && m.is_finite()).then(|| [mx / m, my / m])
}

/// Climbs `density` from `start` (pixels) with a Gaussian kernel until the step is
/// below `epsilon_px` or the iteration cap is reached.
pub fn meanshift(start: [f64; 2], density: &Heatmap, config: &MeanShiftConfig) -> Result<[f64; 2]> {
    config.validate()?;
    if !(start[0].is_finite() && start[1].is_finite()) {
        return Err(Error::NonFinite("meanshift start".into()));
    }
    let mut x = start;
    for it in 0..config.max_iterations {
        let Some(next) = shift_target(x, density, config.bandwidth_px) else {
            if it == 0 {
                return Err(Error::NoKernelMass);
            }
            break;
        };
        let step = ((next[0] - x[0]).powi(2) + (next[1] - x[1]).powi(2)).sqrt();
        x = next;
        if step < config.epsilon_px {
            break;
        }
    }
    Ok(x)
}

/// Trajectory of [`meanshift`], including the start point.
pub fn meanshift_path(start: [f64; 2], density: &Heatmap, config: &MeanShiftConfig) -> Result<Vec<[f64; 2]>> {
    config.validate()?;
    let mut path = vec![start];
    let mut x = start;
    for _ in 0..config.max_iterations {
        let next = shift_target(x, density, config.bandwidth_px).ok_or(Error::NoKernelMass)?;
        let step = ((next[0] - x[0]).powi(2) + (next[1] - x[1]).powi(2)).sqrt();
        x = next;
        path.push(x);
        if step < config.epsilon_px {
            break;
        }
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// denoising benchmark

/// One sequence for the denoising benchmark.
#[derive(Debug, Clone)]
pub struct DenoiseCase {
    pub true_gaze: Vec<GazeFrame>,
    /// Binary object masks per frame.
    pub object_maps: Vec<Heatmap>,
    pub saliency: Vec<DensityMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSettings {
    pub noise_w: f64,
    pub lambda: f64,
    pub min_bandwidth: f64,
    pub max_iterations: usize,
    pub epsilon_px: f64,
    pub seed: u64,
}

/// Mean recovery error in pixels for each map variant at one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRow {
    pub sigma_n: f64,
    pub raw_mae: f64,
    pub obj_mae: f64,
    pub sal_mae: f64,
    pub cond_mae: f64,
    /// Points where meanshift found no mass and the noisy point was kept.
    pub fallbacks: usize,
}

pub const DENOISE_HEADER: &str = "sigma_n,raw_mae,obj_mae,sal_mae,cond_mae";

pub fn denoise_csv(rows: &[DenoiseRow]) -> String {
    let mut s = format!("{DENOISE_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.1},{:.1},{:.1},{:.1}\n",
            r.sigma_n, r.raw_mae, r.obj_mae, r.sal_mae, r.cond_mae
        ));
    }
    s
}

fn px_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Per-cell sums: raw, obj, sal, cond errors, point count, fallbacks.
fn denoise_cell(case: &DenoiseCase, sigma_n: f64, s: &DenoiseSettings, seed: u64) -> Result<([f64; 4], usize, usize)> {
    let t_len = case.true_gaze.len();
    if case.object_maps.len() != t_len || case.saliency.len() != t_len {
        return Err(Error::LengthMismatch {
            what: "denoising maps",
            expected: t_len,
            got: case.object_maps.len().min(case.saliency.len()),
        });
    }
    let (w, h) = case.saliency.first().map(|m| m.dims()).ok_or(Error::NoValidPoints)?;
    let model = NoiseModel::new(sigma_n, s.noise_w, seed)?;
    let noisy = apply_noise(&case.true_gaze, &model)?;
    let ms = MeanShiftConfig {
        max_iterations: s.max_iterations,
        epsilon_px: s.epsilon_px,
        ..MeanShiftConfig::for_noise(sigma_n, s.min_bandwidth, w, h)
    };
    let kernel_sigma = sigma_n.max(s.min_bandwidth);
    let mut sums = [0.0; 4];
    let (mut count, mut fallbacks) = (0, 0);
    for (t, (truth, obs)) in case.true_gaze.iter().zip(&noisy).enumerate() {
        if obs.valid_count() == 0 {
            continue;
        }
        let cond = gaze_conditioned_density(&case.saliency[t], obs, s.lambda, kernel_sigma)?;
        let maps: [&Heatmap; 3] = [&case.object_maps[t], &case.saliency[t], &cond];
        for k in 0..GAZE_SLOTS {
            if !truth.valid[k] {
                continue;
            }
            let tp = [to_pixel(truth.points[k][0], w), to_pixel(truth.points[k][1], h)];
            let op = [to_pixel(obs.points[k][0], w), to_pixel(obs.points[k][1], h)];
            sums[0] += px_dist(op, tp);
            for (m, map) in maps.iter().enumerate() {
                let rec = match meanshift(op, map, &ms) {
                    Ok(p) => p,
                    Err(Error::NoKernelMass) => {
                        fallbacks += 1;
                        op
                    }
                    Err(e) => return Err(e),
                };
                sums[m + 1] += px_dist(rec, tp);
            }
            count += 1;
        }
    }
    Ok((sums, count, fallbacks))
}

/// MAE of noisy gaze and of meanshift recovery on object masks, saliency and the
/// gaze-conditioned density, per noise level. Cells run in parallel with seeds
/// derived from `(seed, level, case)`, so the result does not depend on scheduling.
pub fn denoise_benchmark(cases: &[DenoiseCase], sigmas: &[f64], settings: &DenoiseSettings) -> Result<Vec<DenoiseRow>> {
    let cells: Vec<(usize, usize)> = (0..sigmas.len())
        .flat_map(|i| (0..cases.len()).map(move |c| (i, c)))
        .collect();
    let results = par_map!(cells, |&(i, c): &(usize, usize)| {
        let seed = derive_seed(derive_seed(settings.seed, i as u64), c as u64);
        denoise_cell(&cases[c], sigmas[i], settings, seed)
    });
    let mut rows = Vec::with_capacity(sigmas.len());
    for (i, &sigma_n) in sigmas.iter().enumerate() {
        let mut sums = [0.0; 4];
        let (mut count, mut fallbacks) = (0, 0);
        for (k, r) in results.iter().enumerate() {
            if cells[k].0 != i {
                continue;
            }
            let (s, n, f) = r.as_ref().map_err(|e| Error::Invalid(e.to_string()))?;
            for j in 0..4 {
                sums[j] += s[j];
            }
            count += n;
            fallbacks += f;
        }
        if count == 0 {
            return Err(Error::NoValidPoints);
        }
        let n = count as f64;
        rows.push(DenoiseRow {
            sigma_n,
            raw_mae: sums[0] / n,
            obj_mae: sums[1] / n,
            sal_mae: sums[2] / n,
            cond_mae: sums[3] / n,
            fallbacks,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// correction network

/// `y = S·z + c + W2·tanh(W1·z + b1)` with `z = (x − center) / scale`: one tanh
/// hidden layer plus a learnable linear skip connection. The input normalization
/// is fixed, not trained; it only conditions the optimization. Initialized with
/// the skip equal to the identity and a tiny `W2`, so the map starts near the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionNet {
    pub center: [f64; 2],
    pub scale: [f64; 2],
    pub skip: [[f64; 2]; 2],
    pub offset: [f64; 2],
    /// `hidden × 2`, row-major.
    pub w1: Vec<[f64; 2]>,
    pub b1: Vec<f64>,
    /// `2 × hidden`.
    pub w2: [Vec<f64>; 2],
}

impl CorrectionNet {
    pub fn identity(hidden: usize) -> Self {
        Self {
            center: [0.5, 0.5],
            scale: [1.0, 1.0],
            skip: [[1.0, 0.0], [0.0, 1.0]],
            offset: [0.5, 0.5],
            w1: vec![[0.0, 0.0]; hidden],
            b1: vec![0.0; hidden],
            w2: [vec![0.0; hidden], vec![0.0; hidden]],
        }
    }

    /// Switches to input normalization `(center, scale)` and resets the skip
    /// connection so the linear part is the identity again. Hidden weights are kept
    /// as they are, now acting on the new normalized input.
    pub fn with_input_norm(mut self, center: [f64; 2], scale: [f64; 2]) -> Self {
        self.center = center;
        self.scale = scale;
        self.skip = [[scale[0], 0.0], [0.0, scale[1]]];
        self.offset = center;
        self
    }

    /// Near-identity net with random hidden weights and output weights of scale `init_scale`.
    pub fn near_identity(hidden: usize, init_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut net = Self::identity(hidden);
        for r in &mut net.w1 {
            *r = [2.0 * unit.sample(&mut rng), 2.0 * unit.sample(&mut rng)];
        }
        for b in &mut net.b1 {
            *b = unit.sample(&mut rng);
        }
        for row in &mut net.w2 {
            for v in row.iter_mut() {
                *v = init_scale * unit.sample(&mut rng);
            }
        }
        net
    }

    /// Exactly the affine map `t`.
    pub fn from_affine(t: &Affine2D, hidden: usize) -> Self {
        Self {
            skip: t.a,
            offset: t.apply([0.5, 0.5]),
            ..Self::identity(hidden)
        }
    }

    fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.center[0]) / self.scale[0], (p[1] - self.center[1]) / self.scale[1]]
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn hidden_act(&self, p: [f64; 2]) -> Vec<f64> {
        let q = self.normalize(p);
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(w, b)| (w[0] * q[0] + w[1] * q[1] + b).tanh())
            .collect()
    }

    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let act = self.hidden_act(p);
        let z = self.normalize(p);
        [0, 1].map(|o| {
            self.skip[o][0] * z[0]
                + self.skip[o][1] * z[1]
                + self.offset[o]
                + self.w2[o].iter().zip(&act).map(|(w, a)| w * a).sum::<f64>()
        })
    }

    fn n_params(&self) -> usize {
        6 + 5 * self.hidden()
    }

    fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(self.skip.iter().flatten());
        v.extend(self.offset);
        v.extend(self.w1.iter().flatten());
        v.extend(&self.b1);
        v.extend(&self.w2[0]);
        v.extend(&self.w2[1]);
        v
    }

    fn set_params(&mut self, v: &[f64]) {
        let h = self.hidden();
        self.skip = [[v[0], v[1]], [v[2], v[3]]];
        self.offset = [v[4], v[5]];
        for (k, r) in self.w1.iter_mut().enumerate() {
            *r = [v[6 + 2 * k], v[7 + 2 * k]];
        }
        self.b1.copy_from_slice(&v[6 + 2 * h..6 + 3 * h]);
        self.w2[0].copy_from_slice(&v[6 + 3 * h..6 + 4 * h]);
        self.w2[1].copy_from_slice(&v[6 + 4 * h..6 + 5 * h]);
    }

    /// Adds `dL/dθ` for one input to `grad`, given `dL/dy`.
    fn backward(&self, p: [f64; 2], dy: [f64; 2], grad: &mut [f64]) {
        let h = self.hidden();
        let q = self.normalize(p);
        let act = self.hidden_act(p);
        for o in 0..2 {
            grad[2 * o] += dy[o] * q[0];
            grad[2 * o + 1] += dy[o] * q[1];
            grad[4 + o] += dy[o];
        }
        for k in 0..h {
            let da = dy[0] * self.w2[0][k] + dy[1] * self.w2[1][k];
            let dz = da * (1.0 - act[k] * act[k]);
            grad[6 + 2 * k] += dz * q[0];
            grad[7 + 2 * k] += dz * q[1];
            grad[6 + 2 * h + k] += dz;
            grad[6 + 3 * h + k] += dy[0] * act[k];
            grad[6 + 4 * h + k] += dy[1] * act[k];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// Training signal for [`fit_correction`].
#[derive(Debug, Clone, Copy)]
pub enum CorrectionMode<'a> {
    /// NLL of a Gaussian (normalized std `sigma`, diagonal-relative) around the true gaze.
    Supervised { targets: &'a [[f64; 2]], sigma: f64 },
    /// NLL under the per-sample density, sampled bilinearly.
    SelfSupervised { densities: &'a [&'a DensityMap] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSettings {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_scale: f64,
    /// L2 penalty on the hidden-to-output weights, so the linear skip carries
    /// whatever the data explain linearly.
    pub weight_decay: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CorrectionFit {
    pub net: CorrectionNet,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mean NLL (up to a constant) and its gradient with respect to the parameters.
fn correction_loss(
    net: &CorrectionNet,
    inputs: &[[f64; 2]],
    mode: &CorrectionMode,
    width: usize,
    height: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = inputs.len() as f64;
    let (sx, sy) = ((width - 1) as f64, (height - 1) as f64);
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for (i, &p) in inputs.iter().enumerate() {
        let y = net.forward(p);
        let (value, dy) = match mode {
            CorrectionMode::Supervised { targets, sigma } => {
                let s = sigma_to_pixels(*sigma, width, height);
                let (dx, dyy) = ((y[0] - targets[i][0]) * sx, (y[1] - targets[i][1]) * sy);
                let k = 1.0 / (s * s);
                (0.5 * k * (dx * dx + dyy * dyy), [k * dx * sx, k * dyy * sy])
            }
            CorrectionMode::SelfSupervised { densities } => {
                let d = densities[i];
                let (px, py) = (y[0] * sx, y[1] * sy);
                let v = d.sample(px, py) + crate::objective::GAZE_LOG_EPS;
                let (gx, gy) = d.sample_coord_grad(px, py);
                (-v.ln(), [-gx * sx / v, -gy * sy / v])
            }
        };
        total += value;
        if let Some(g) = grad.as_deref_mut() {
            net.backward(p, [dy[0] / n, dy[1] / n], g);
        }
    }
    total / n
}

/// Per-axis mean and std of the inputs, with the std floored so degenerate inputs
/// do not blow up the normalization.
fn input_stats(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0] / n;
        mean[1] += p[1] / n;
    }
    let mut var = [0.0; 2];
    for p in points {
        var[0] += (p[0] - mean[0]).powi(2) / n;
        var[1] += (p[1] - mean[1]).powi(2) / n;
    }
    (mean, var.map(|v| v.sqrt().max(1e-3)))
}

/// Fits a correction net to observed (miscalibrated) gaze with Adam.
pub fn fit_correction(
    observed: &[[f64; 2]],
    mode: CorrectionMode,
    width: usize,
    height: usize,
    settings: &CorrectionSettings,
) -> Result<CorrectionFit> {
    if observed.len() < 50 {
        return Err(Error::Invalid(format!(
            "recalibration needs at least 50 gaze samples, got {}",
            observed.len()
        )));
    }
    let expected = match &mode {
        CorrectionMode::Supervised { targets, .. } => targets.len(),
        CorrectionMode::SelfSupervised { densities } => densities.len(),
    };
    if expected != observed.len() {
        return Err(Error::LengthMismatch {
            what: "recalibration targets",
            expected: observed.len(),
            got: expected,
        });
    }
    let (center, scale) = input_stats(observed);
    let mut net = CorrectionNet::near_identity(settings.hidden, settings.init_scale, settings.seed).with_input_norm(center, scale);
    let mut theta = net.params();
    let mut g = vec![0.0; theta.len()];
    let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let initial_loss = correction_loss(&net, observed, &mode, width, height, None);
    if !initial_loss.is_finite() {
        return Err(Error::NonFinite(format!("initial recalibration loss {initial_loss}")));
    }
    for epoch in 1..=settings.epochs {
        let mut loss = correction_loss(&net, observed, &mode, width, height, Some(&mut g));
        let h = net.hidden();
        for i in theta.len() - 2 * h..theta.len() {
            loss += 0.5 * settings.weight_decay * theta[i] * theta[i];
            g[i] += settings.weight_decay * theta[i];
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("recalibration loss diverged at epoch {epoch}")));
        }
        // cosine decay keeps the final iterates from rattling around the optimum
        let progress = epoch as f64 / settings.epochs as f64;
        let lr = settings.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()).max(0.02);
        let (c1, c2) = (1.0 - b1.powi(epoch as i32), 1.0 - b2.powi(epoch as i32));
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        net.set_params(&theta);
    }
    let final_loss = correction_loss(&net, observed, &mode, width, height, None);
    if !final_loss.is_finite() || !net.is_finite() {
        return Err(Error::NonFinite("recalibration produced non-finite weights".into()));
    }
    Ok(CorrectionFit {
        net,
        initial_loss,
        final_loss,
    })
}

/// Least-squares affine fit of `f` over a 16×16 grid on `[0,1]²`.
pub fn fit_affine(f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Affine2D> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [[0.0f64; 3]; 2];
    for j in 0..16 {
        for i in 0..16 {
            let p = [i as f64 / 15.0, j as f64 / 15.0];
            let row = [p[0], p[1], 1.0];
            let y = f(p);
            for r in 0..3 {
                for c in 0..3 {
                    ata[r][c] += row[r] * row[c];
                }
                aty[0][r] += row[r] * y[0];
                aty[1][r] += row[r] * y[1];
            }
        }
    }
    let solve = |rhs: [f64; 3]| -> Result<[f64; 3]> {
        // Cramer's rule on the 3×3 normal equations
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(ata);
        if d.abs() < 1e-12 {
            return Err(Error::Singular);
        }
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let mut m = ata;
            for r in 0..3 {
                m[r][k] = rhs[r];
            }
            *o = det3(m) / d;
        }
        Ok(out)
    };
    let x = solve(aty[0])?;
    let y = solve(aty[1])?;
    Ok(Affine2D {
        a: [[x[0], x[1]], [y[0], y[1]]],
        b: [x[2], y[2]],
    })
}

/// Sum of squared differences between the six elements of the net's best affine
/// approximation on `[0,1]²` and those of `corrupt⁻¹`.
pub fn calibration_error(net: &CorrectionNet, corrupt: &Affine2D) -> Result<f64> {
    let inv = corrupt.inverse()?;
    let fit = fit_affine(|p| net.forward(p))?;
    Ok(fit
        .elements()
        .iter()
        .zip(inv.elements())
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}
