//! Heatmap and flow primitives: sampling, warping, splatting, normalization
//! and the multi-channel Voronoi gaze encoding.
//!
//! Coordinates come in two flavours. Pixel coordinates are continuous with
//! pixel centres at integers. Normalized coordinates live in `[0,1]²` and map to
//! pixels via `x_px = x · (W − 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::par_rows_mut;

/// Default working resolution.
pub const DEFAULT_WIDTH: usize = 240;
pub const DEFAULT_HEIGHT: usize = 135;

/// Number of gaze slots carried by every frame.
pub const GAZE_SLOTS: usize = 3;

/// Gaussian kernels are truncated at this many standard deviations.
pub const SPLAT_TRUNCATION: f64 = 4.0;

/// Row-major grid of finite scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width >= 2 && height >= 2, "heatmap must be at least 2x2");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Invalid(format!(
                "heatmap must be at least 2x2, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Invalid(format!(
                "heatmap data has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("heatmap value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut map = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                map.data[y * width + x] = f(x, y);
            }
        }
        map
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Pixel of the largest value; ties resolve to the first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Heatmap {
        Heatmap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear interpolation at a continuous pixel coordinate, clamped to the border.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        self.sample_weights(x, y)
            .iter()
            .map(|&(i, w)| w * self.data[i])
            .sum()
    }

    /// The four (index, weight) pairs that make up a bilinear sample. Weights sum to 1.
    #[inline]
    pub fn sample_weights(&self, x: f64, y: f64) -> [(usize, f64); 4] {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        // both are ≥ 0 after the clamp, so truncation is floor
        let x0 = (xc as usize).min(self.width - 2);
        let y0 = (yc as usize).min(self.height - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let i00 = y0 * self.width + x0;
        let i10 = i00 + 1;
        let i01 = i00 + self.width;
        let i11 = i01 + 1;
        [
            (i00, (1.0 - fx) * (1.0 - fy)),
            (i10, fx * (1.0 - fy)),
            (i01, (1.0 - fx) * fy),
            (i11, fx * fy),
        ]
    }

    /// Derivative of the bilinear sample with respect to the sample coordinates.
    /// Zero along an axis where the coordinate is clamped.
    pub fn sample_coord_grad(&self, x: f64, y: f64) -> (f64, f64) {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let xc = x.clamp(0.0, max_x);
        let yc = y.clamp(0.0, max_y);
        let x0 = (xc as usize).min(self.width - 2);
        let y0 = (yc as usize).min(self.height - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let v00 = self.get(x0, y0);
        let v10 = self.get(x0 + 1, y0);
        let v01 = self.get(x0, y0 + 1);
        let v11 = self.get(x0 + 1, y0 + 1);
        let dx = if x < 0.0 || x > max_x {
            0.0
        } else {
            (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy
        };
        let dy = if y < 0.0 || y > max_y {
            0.0
        } else {
            (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx
        };
        (dx, dy)
    }
}

/// Free-function form of [`Heatmap::sample`].
pub fn bilinear_sample(map: &Heatmap, x: f64, y: f64) -> f64 {
    map.sample(x, y)
}

/// Nonnegative map summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap(Heatmap);

impl DensityMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        DensityMap(Heatmap::filled(
            width,
            height,
            1.0 / (width * height) as f64,
        ))
    }

    pub fn as_heatmap(&self) -> &Heatmap {
        &self.0
    }

    pub fn into_heatmap(self) -> Heatmap {
        self.0
    }

    /// Checks the density invariants without modifying the map.
    pub fn is_valid(&self) -> bool {
        self.0.data.iter().all(|&v| v >= 0.0) && (self.0.sum() - 1.0).abs() <= 1e-6
    }
}

impl std::ops::Deref for DensityMap {
    type Target = Heatmap;

    fn deref(&self) -> &Heatmap {
        &self.0
    }
}

/// Clip negatives to zero and divide by the total.
pub fn normalize(map: &Heatmap) -> Result<DensityMap> {
    let mut out = map.map(|v| v.max(0.0));
    let total = out.sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    for v in out.data_mut() {
        *v /= total;
    }
    Ok(DensityMap(out))
}

/// Softmax for maps that live in logit space.
pub fn softmax(logits: &Heatmap) -> DensityMap {
    let m = logits.max();
    let mut out = logits.map(|v| (v - m).exp());
    let total = out.sum();
    for v in out.data_mut() {
        *v /= total;
    }
    DensityMap(out)
}

/// Normalized coordinate to pixel coordinate along an axis of `extent` pixels.
#[inline]
pub fn to_pixel(coord: f64, extent: usize) -> f64 {
    coord * (extent - 1) as f64
}

/// Pixel coordinate to normalized coordinate.
#[inline]
pub fn to_normalized(px: f64, extent: usize) -> f64 {
    px / (extent - 1) as f64
}

/// Converts a width given in normalized units into pixels. Normalized widths are
/// measured relative to the image diagonal `√(W² + H²)`.
#[inline]
pub fn sigma_to_pixels(sigma: f64, width: usize, height: usize) -> f64 {
    sigma * ((width * width + height * height) as f64).sqrt()
}

/// Three gaze slots for one frame, in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeFrame {
    #[serde(rename = "frame")]
    pub frame_index: usize,
    pub points: [[f64; 2]; GAZE_SLOTS],
    pub valid: [bool; GAZE_SLOTS],
}

impl GazeFrame {
    pub fn new(frame_index: usize, points: [[f64; 2]; GAZE_SLOTS], valid: [bool; GAZE_SLOTS]) -> Result<Self> {
        let frame = Self {
            frame_index,
            points,
            valid,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// All three slots valid and at the same location.
    pub fn fixation(frame_index: usize, x: f64, y: f64) -> Self {
        Self {
            frame_index,
            points: [[x, y]; GAZE_SLOTS],
            valid: [true; GAZE_SLOTS],
        }
    }

    /// One valid slot, the others empty.
    pub fn single(frame_index: usize, x: f64, y: f64) -> Self {
        Self {
            frame_index,
            points: [[x, y], [0.0, 0.0], [0.0, 0.0]],
            valid: [true, false, false],
        }
    }

    /// No valid slots (e.g. a blink).
    pub fn blink(frame_index: usize) -> Self {
        Self {
            frame_index,
            points: [[0.0, 0.0]; GAZE_SLOTS],
            valid: [false; GAZE_SLOTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (p, &ok) in self.points.iter().zip(&self.valid) {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite(format!(
                    "gaze point in frame {}",
                    self.frame_index
                )));
            }
            if ok && !(0.0..=1.0).contains(&p[0]) || ok && !(0.0..=1.0).contains(&p[1]) {
                return Err(Error::Invalid(format!(
                    "gaze point ({}, {}) in frame {} outside [0,1]²",
                    p[0], p[1], self.frame_index
                )));
            }
        }
        Ok(())
    }

    pub fn valid_points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.points
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(p, _)| *p)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid points converted to pixel coordinates on a `width × height` grid.
    pub fn valid_pixels(&self, width: usize, height: usize) -> Vec<[f64; 2]> {
        self.valid_points()
            .map(|p| [to_pixel(p[0], width), to_pixel(p[1], height)])
            .collect()
    }
}

/// Per-pixel motion `(u, v)` in pixels/frame linking frame t to t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_planes(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Invalid(format!(
                "flow planes must have {} values",
                width * height
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow vector".into()));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    /// Bilinearly interpolated flow vector at a continuous pixel coordinate.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (xc as usize).min(self.width - 2);
        let y0 = (yc as usize).min(self.height - 2);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let w = [
            (y0 * self.width + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * self.width + x0 + 1, fx * (1.0 - fy)),
            ((y0 + 1) * self.width + x0, (1.0 - fx) * fy),
            ((y0 + 1) * self.width + x0 + 1, fx * fy),
        ];
        w.iter().fold((0.0, 0.0), |(a, b), &(i, wt)| {
            (a + wt * self.u[i], b + wt * self.v[i])
        })
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|&x| x == 0.0)
    }
}

fn check_flow(map: &Heatmap, flow: &FlowField) -> Result<()> {
    if map.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected: map.dims(),
            got: flow.dims(),
        });
    }
    Ok(())
}

/// Backward lookup: `out(x) = map(x + flow(x))`, clamp-to-edge.
pub fn warp_by_flow(map: &Heatmap, flow: &FlowField) -> Result<Heatmap> {
    check_flow(map, flow)?;
    let (w, _) = map.dims();
    let mut out = map.clone();
    par_rows_mut!(out.data_mut(), w, |(y, row): (usize, &mut [f64])| {
        for (x, o) in row.iter_mut().enumerate() {
            let (u, v) = flow.at(x, y);
            *o = map.sample(x as f64 + u, y as f64 + v);
        }
    });
    Ok(out)
}

/// Forward advection: every pixel pushes its value to `x + flow(x)` with bilinear
/// splatting weights. Mass landing outside the grid is dropped, so the total never grows.
pub fn advect(map: &Heatmap, flow: &FlowField) -> Result<Heatmap> {
    check_flow(map, flow)?;
    if flow.is_zero() {
        return Ok(map.clone());
    }
    let (w, h) = map.dims();
    let mut out = Heatmap::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let value = map.get(x, y);
            if value == 0.0 {
                continue;
            }
            let (u, v) = flow.at(x, y);
            let tx = x as f64 + u;
            let ty = y as f64 + v;
            let fx0 = tx.floor();
            let fy0 = ty.floor();
            let fx = tx - fx0;
            let fy = ty - fy0;
            for (dx, dy, wt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                if wt == 0.0 {
                    continue;
                }
                let px = fx0 as i64 + dx;
                let py = fy0 as i64 + dy;
                if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                    let i = py as usize * w + px as usize;
                    out.data_mut()[i] += wt * value;
                }
            }
        }
    }
    Ok(out)
}

/// Moves a pixel-space point one frame forward along the flow.
pub fn advect_point(p: [f64; 2], flow: &FlowField) -> [f64; 2] {
    let (u, v) = flow.sample(p[0], p[1]);
    [p[0] + u, p[1] + v]
}

/// Adds `amplitude · exp(−r²/2σ²)` around a pixel-space centre, truncated at 4σ,
/// combining with existing values through `combine`.
pub fn stamp_gaussian(
    map: &mut Heatmap,
    center: [f64; 2],
    sigma_px: f64,
    amplitude: f64,
    combine: impl Fn(f64, f64) -> f64,
) {
    let (w, h) = map.dims();
    let reach = SPLAT_TRUNCATION * sigma_px;
    let x_lo = (center[0] - reach).ceil().max(0.0) as usize;
    let y_lo = (center[1] - reach).ceil().max(0.0) as usize;
    let x_hi = (center[0] + reach).floor().min((w - 1) as f64);
    let y_hi = (center[1] + reach).floor().min((h - 1) as f64);
    if x_hi < 0.0 || y_hi < 0.0 {
        return;
    }
    let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    let r2max = reach * reach;
    for y in y_lo..=y_hi {
        let dy = y as f64 - center[1];
        for x in x_lo..=x_hi {
            let dx = x as f64 - center[0];
            let r2 = dx * dx + dy * dy;
            if r2 > r2max {
                continue;
            }
            let g = amplitude * (-r2 * inv).exp();
            let i = y * w + x;
            let cur = map.data()[i];
            map.data_mut()[i] = combine(cur, g);
        }
    }
}

/// Isotropic Gaussian per valid gaze point (σ in normalized units), summed and
/// normalized to a density.
pub fn gaussian_splat(points: &GazeFrame, sigma: f64, width: usize, height: usize) -> Result<DensityMap> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("splat sigma must be positive, got {sigma}")));
    }
    let pixels = points.valid_pixels(width, height);
    if pixels.is_empty() {
        return Err(Error::NoValidPoints);
    }
    let sigma_px = sigma_to_pixels(sigma, width, height);
    let mut map = Heatmap::zeros(width, height);
    for p in pixels {
        stamp_gaussian(&mut map, p, sigma_px, 1.0, |a, b| a + b);
    }
    normalize(&map)
}

/// Number of channels in a Voronoi gaze encoding.
pub const VORONOI_CHANNELS: usize = 8;

/// Channel layout of [`VoronoiEncoding`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoronoiChannel {
    Dx = 0,
    Dy = 1,
    Dx2 = 2,
    Dy2 = 3,
    DxDy = 4,
    Distance = 5,
    Dropout = 6,
    Valid = 7,
}

/// Per-pixel offsets to the nearest gaze point, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiEncoding {
    width: usize,
    height: usize,
    channels: Vec<[f64; VORONOI_CHANNELS]>,
}

impl VoronoiEncoding {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64; VORONOI_CHANNELS] {
        &self.channels[y * self.width + x]
    }

    pub fn channel(&self, ch: VoronoiChannel) -> Heatmap {
        let data = self.channels.iter().map(|c| c[ch as usize]).collect();
        Heatmap::from_vec(self.width, self.height, data).expect("encoding dims")
    }
}

/// Encodes the frame's gaze as eight feature channels: `dx, dy, dx², dy², dx·dy,
/// √(dx²+dy²)` to the nearest valid, non-dropped point, a dropout bit marking the
/// Voronoi cells of dropped points, and a validity bit.
pub fn voronoi_encode(
    points: &GazeFrame,
    dropout: [bool; GAZE_SLOTS],
    width: usize,
    height: usize,
) -> VoronoiEncoding {
    let all: Vec<(usize, [f64; 2])> = (0..GAZE_SLOTS)
        .filter(|&i| points.valid[i])
        .map(|i| (i, points.points[i]))
        .collect();
    let kept: Vec<[f64; 2]> = all
        .iter()
        .filter(|(i, _)| !dropout[*i])
        .map(|(_, p)| *p)
        .collect();
    let nearest = |pts: &mut dyn Iterator<Item = (usize, [f64; 2])>, q: [f64; 2]| {
        pts.map(|(i, p)| {
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            (i, dx, dy, dx * dx + dy * dy)
        })
        .min_by(|a, b| a.3.total_cmp(&b.3))
    };
    let mut channels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let q = [to_normalized(x as f64, width), to_normalized(y as f64, height)];
            let mut c = [0.0; VORONOI_CHANNELS];
            if let Some((_, dx, dy, d2)) =
                nearest(&mut kept.iter().copied().enumerate(), q)
            {
                c[0] = dx;
                c[1] = dy;
                c[2] = dx * dx;
                c[3] = dy * dy;
                c[4] = dx * dy;
                c[5] = d2.sqrt();
                c[7] = 1.0;
            }
            if let Some((slot, ..)) = nearest(&mut all.iter().copied(), q) {
                if dropout[slot] {
                    c[6] = 1.0;
                }
            }
            channels.push(c);
        }
    }
    VoronoiEncoding {
        width,
        height,
        channels,
    }
}
