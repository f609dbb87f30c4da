//! Loss terms over awareness and gaze maps, their analytic gradients, the
//! weighted total and a central-difference gradient checker.
//!
//! The per-term kernels operate on plain slices of maps so that the variational
//! estimator can reuse them without building a [`SequenceBatch`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_splat, normalize, to_pixel, DensityMap, FlowField, GazeFrame, Heatmap};

/// Denominator floor in the edge-aware smoothness term.
pub const SPATIAL_EPS: f64 = 1e-4;

/// Additive floor inside the log of the gaze likelihood.
pub const GAZE_LOG_EPS: f64 = 1e-12;

/// Loss coefficients and shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_g: f64,
    pub alpha_att: f64,
    pub alpha_aa: f64,
    pub alpha_s_a: f64,
    pub alpha_s_g: f64,
    pub alpha_t: f64,
    pub alpha_dec: f64,
    pub alpha_cap: f64,
    pub alpha_con_g: f64,
    pub alpha_con_a: f64,
    pub w_of: f64,
    pub eps_dec: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_g: 1.2,
            alpha_att: 12.0,
            alpha_aa: 1.0,
            alpha_s_a: 100.0,
            alpha_s_g: 5e10,
            alpha_t: 600.0,
            alpha_dec: 1.5e6,
            alpha_cap: 0.01,
            alpha_con_g: 1e7,
            alpha_con_a: 10.0,
            w_of: 0.5,
            eps_dec: 0.2,
            c1: 0.1,
            c2: 1.0,
        }
    }
}

impl LossWeights {
    /// All coefficients zero; shape parameters at their defaults.
    pub fn zeroed() -> Self {
        let mut w = Self::default();
        for t in Term::ALL {
            w.set_alpha(t, 0.0);
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for t in Term::ALL {
            let a = self.alpha(t);
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::Config(format!("alpha for {t} must be finite and >= 0, got {a}")));
            }
        }
        if !(self.w_of > 0.0 && self.w_of <= 1.0) {
            return Err(Error::Config(format!("w_of must be in (0,1], got {}", self.w_of)));
        }
        if !(self.eps_dec >= 0.0 && self.eps_dec < 1.0) {
            return Err(Error::Config(format!("eps_dec must be in [0,1), got {}", self.eps_dec)));
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err(Error::Config("c1 and c2 must be >= 0".into()));
        }
        Ok(())
    }

    pub fn alpha(&self, term: Term) -> f64 {
        match term {
            Term::Gaze => self.alpha_g,
            Term::Att => self.alpha_att,
            Term::Aa => self.alpha_aa,
            Term::SpatialA => self.alpha_s_a,
            Term::SpatialG => self.alpha_s_g,
            Term::Temporal => self.alpha_t,
            Term::Decay => self.alpha_dec,
            Term::Capacity => self.alpha_cap,
            Term::ConsistencyG => self.alpha_con_g,
            Term::ConsistencyA => self.alpha_con_a,
        }
    }

    pub fn set_alpha(&mut self, term: Term, value: f64) {
        let slot = match term {
            Term::Gaze => &mut self.alpha_g,
            Term::Att => &mut self.alpha_att,
            Term::Aa => &mut self.alpha_aa,
            Term::SpatialA => &mut self.alpha_s_a,
            Term::SpatialG => &mut self.alpha_s_g,
            Term::Temporal => &mut self.alpha_t,
            Term::Decay => &mut self.alpha_dec,
            Term::Capacity => &mut self.alpha_cap,
            Term::ConsistencyG => &mut self.alpha_con_g,
            Term::ConsistencyA => &mut self.alpha_con_a,
        };
        *slot = value;
    }
}

/// Identifies one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Gaze,
    Att,
    Aa,
    SpatialA,
    SpatialG,
    Temporal,
    Decay,
    Capacity,
    ConsistencyG,
    ConsistencyA,
}

impl Term {
    pub const ALL: [Term; 10] = [
        Term::Gaze,
        Term::Att,
        Term::Aa,
        Term::SpatialA,
        Term::SpatialG,
        Term::Temporal,
        Term::Decay,
        Term::Capacity,
        Term::ConsistencyG,
        Term::ConsistencyA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Gaze => "gaze",
            Term::Att => "att",
            Term::Aa => "aa",
            Term::SpatialA => "s_a",
            Term::SpatialG => "s_g",
            Term::Temporal => "t",
            Term::Decay => "dec",
            Term::Capacity => "cap",
            Term::ConsistencyG => "con_g",
            Term::ConsistencyA => "con_a",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTerm(s.to_string()))
    }
}

/// A labelled awareness measurement in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub label: f64,
}

impl AnnotationRecord {
    pub fn new(frame: usize, x: f64, y: f64, label: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::Invalid(format!("annotation label {label} outside [0,1]")));
        }
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Invalid(format!("annotation ({x}, {y}) outside [0,1]²")));
        }
        Ok(Self { frame, x, y, label })
    }
}

/// Everything the loss needs about one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchFrame {
    pub image: Heatmap,
    pub awareness: Heatmap,
    /// Gaze probability map. Kept as a plain map so that gradients can perturb it freely.
    pub gaze_density: Heatmap,
    /// Flow from this frame to the next; `None` on the last frame.
    pub flow: Option<FlowField>,
    pub gaze: GazeFrame,
}

/// A contiguous run of frames starting at absolute frame index `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub start: usize,
    pub frames: Vec<BatchFrame>,
    pub annotations: Vec<AnnotationRecord>,
}

impl SequenceBatch {
    pub fn new(start: usize, frames: Vec<BatchFrame>, annotations: Vec<AnnotationRecord>) -> Result<Self> {
        let batch = Self {
            start,
            frames,
            annotations,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::Invalid("batch has no frames".into()));
        };
        let (w, h) = first.image.dims();
        for f in &self.frames {
            f.image.check_dims(w, h)?;
            f.awareness.check_dims(w, h)?;
            f.gaze_density.check_dims(w, h)?;
            if let Some(flow) = &f.flow {
                if flow.dims() != (w, h) {
                    return Err(Error::DimensionMismatch {
                        expected: (w, h),
                        got: flow.dims(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].image.dims()
    }

    pub fn awareness(&self) -> Vec<Heatmap> {
        self.frames.iter().map(|f| f.awareness.clone()).collect()
    }

    pub fn gaze(&self) -> Vec<GazeFrame> {
        self.frames.iter().map(|f| f.gaze).collect()
    }

    /// Flow for every consecutive pair, or the first missing pair.
    pub fn flows(&self) -> Result<Vec<FlowField>> {
        self.frames
            .iter()
            .take(self.frames.len().saturating_sub(1))
            .enumerate()
            .map(|(i, f)| {
                f.flow
                    .clone()
                    .ok_or(Error::MissingFlow(self.start + i, self.start + i + 1))
            })
            .collect()
    }

    pub fn valid_gaze_count(&self) -> usize {
        self.frames.iter().map(|f| f.gaze.valid_count()).sum()
    }

    /// Annotations that fall inside this batch, with frame indices made relative.
    pub fn local_annotations(&self) -> Vec<AnnotationRecord> {
        local_annotations(&self.annotations, self.start, self.frames.len())
    }
}

pub(crate) fn local_annotations(all: &[AnnotationRecord], start: usize, len: usize) -> Vec<AnnotationRecord> {
    all.iter()
        .filter(|a| a.frame >= start && a.frame < start + len)
        .map(|a| AnnotationRecord {
            frame: a.frame - start,
            ..*a
        })
        .collect()
}

fn add_sample_grad(map_grad: &mut Heatmap, map: &Heatmap, x: f64, y: f64, scale: f64) {
    for (i, w) in map.sample_weights(x, y) {
        map_grad.data_mut()[i] += scale * w;
    }
}

// ---------------------------------------------------------------------------
// slice-level kernels

/// `−Σ log(p_G(x) + ε)` over valid gaze points.
pub fn gaze_nll_value(densities: &[Heatmap], gaze: &[GazeFrame]) -> f64 {
    densities
        .iter()
        .zip(gaze)
        .map(|(p, g)| {
            g.valid_pixels(p.width(), p.height())
                .iter()
                .map(|q| -(p.sample(q[0], q[1]) + GAZE_LOG_EPS).ln())
                .sum::<f64>()
        })
        .sum()
}

pub fn gaze_nll_grad(densities: &[Heatmap], gaze: &[GazeFrame], scale: f64, out: &mut [Heatmap]) {
    for ((p, g), o) in densities.iter().zip(gaze).zip(out.iter_mut()) {
        for q in g.valid_pixels(p.width(), p.height()) {
            let s = p.sample(q[0], q[1]) + GAZE_LOG_EPS;
            add_sample_grad(o, p, q[0], q[1], -scale / s);
        }
    }
}

/// `Σ (M(x,t) − L)²` over annotations; frame indices relative to `maps`.
pub fn att_value(maps: &[Heatmap], annotations: &[AnnotationRecord]) -> f64 {
    annotations
        .iter()
        .map(|a| {
            let m = &maps[a.frame];
            let r = m.sample(to_pixel(a.x, m.width()), to_pixel(a.y, m.height())) - a.label;
            r * r
        })
        .sum()
}

pub fn att_grad(maps: &[Heatmap], annotations: &[AnnotationRecord], scale: f64, out: &mut [Heatmap]) {
    for a in annotations {
        let m = &maps[a.frame];
        let (x, y) = (to_pixel(a.x, m.width()), to_pixel(a.y, m.height()));
        let r = m.sample(x, y) - a.label;
        add_sample_grad(&mut out[a.frame], m, x, y, 2.0 * scale * r);
    }
}

/// `Σ (M(x,t) − 1)²` over valid gaze points.
pub fn aa_value(maps: &[Heatmap], gaze: &[GazeFrame]) -> f64 {
    maps.iter()
        .zip(gaze)
        .map(|(m, g)| {
            g.valid_pixels(m.width(), m.height())
                .iter()
                .map(|q| (m.sample(q[0], q[1]) - 1.0).powi(2))
                .sum::<f64>()
        })
        .sum()
}

pub fn aa_grad(maps: &[Heatmap], gaze: &[GazeFrame], scale: f64, out: &mut [Heatmap]) {
    for ((m, g), o) in maps.iter().zip(gaze).zip(out.iter_mut()) {
        for q in g.valid_pixels(m.width(), m.height()) {
            let r = m.sample(q[0], q[1]) - 1.0;
            add_sample_grad(o, m, q[0], q[1], 2.0 * scale * r);
        }
    }
}

/// Per-pixel `1/√(|∇I|² + ε_s)`.
pub fn spatial_weights(image: &Heatmap) -> Vec<f64> {
    let (w, h) = image.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = forward_diff(image, x, y);
            out.push(1.0 / (gx * gx + gy * gy + SPATIAL_EPS).sqrt());
        }
    }
    out
}

/// Index pairs `(a, b)` such that the x and y differences at `(x, y)` are `φ[b] − φ[a]`.
#[inline]
fn diff_pairs(w: usize, h: usize, x: usize, y: usize) -> ((usize, usize), (usize, usize)) {
    let i = y * w + x;
    let xp = if x + 1 < w { (i, i + 1) } else { (i - 1, i) };
    let yp = if y + 1 < h { (i, i + w) } else { (i - w, i) };
    (xp, yp)
}

#[inline]
fn forward_diff(m: &Heatmap, x: usize, y: usize) -> (f64, f64) {
    let ((xa, xb), (ya, yb)) = diff_pairs(m.width(), m.height(), x, y);
    let d = m.data();
    (d[xb] - d[xa], d[yb] - d[ya])
}

/// `Σ |∇φ|² / √(|∇I|² + ε_s)` with precomputed weights.
pub fn spatial_value_weighted(phi: &Heatmap, weights: &[f64]) -> f64 {
    let (w, h) = phi.dims();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = forward_diff(phi, x, y);
            total += weights[y * w + x] * (gx * gx + gy * gy);
        }
    }
    total
}

pub fn spatial_grad_weighted(phi: &Heatmap, weights: &[f64], scale: f64, out: &mut Heatmap) {
    let (w, h) = phi.dims();
    let d = phi.data();
    let g = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let ((xa, xb), (ya, yb)) = diff_pairs(w, h, x, y);
            let k = 2.0 * scale * weights[y * w + x];
            let gx = d[xb] - d[xa];
            let gy = d[yb] - d[ya];
            g[xb] += k * gx;
            g[xa] -= k * gx;
            g[yb] += k * gy;
            g[ya] -= k * gy;
        }
    }
}

/// Edge-aware smoothness of one map, weighted by the gradient of its scene image.
pub fn loss_spatial(phi: &Heatmap, image: &Heatmap) -> Result<f64> {
    image.check_dims(phi.width(), phi.height())?;
    Ok(spatial_value_weighted(phi, &spatial_weights(image)))
}

/// Asymmetric penalty `c1·(d)₊ + c2·((d)₋)²` and its derivative in `d`
/// (subgradient 0 at the kink).
#[inline]
fn hinge(d: f64, c1: f64, c2: f64) -> (f64, f64) {
    if d > 0.0 {
        (c1 * d, c1)
    } else if d < 0.0 {
        (c2 * d * d, 2.0 * c2 * d)
    } else {
        (0.0, 0.0)
    }
}

/// Bilinear taps of `m` at `(x,y) + (u,v)` and how many of them are used. A target
/// that lands on a grid point inside the map needs only one.
#[inline]
fn flow_taps(m: &Heatmap, x: usize, y: usize, u: f64, v: f64) -> ([(usize, f64); 4], usize) {
    let (iu, iv) = (u as i64, v as i64);
    if iu as f64 == u && iv as f64 == v {
        let (tx, ty) = (x as i64 + iu, y as i64 + iv);
        if tx >= 0 && ty >= 0 && (tx as usize) < m.width() && (ty as usize) < m.height() {
            return ([(m.index(tx as usize, ty as usize), 1.0), (0, 0.0), (0, 0.0), (0, 0.0)], 1);
        }
    }
    (m.sample_weights(x as f64 + u, y as f64 + v), 4)
}

#[inline]
fn flow_sample(m: &Heatmap, x: usize, y: usize, u: f64, v: f64) -> f64 {
    let (taps, n) = flow_taps(m, x, y, u, v);
    taps[..n].iter().map(|&(i, w)| w * m.data()[i]).sum()
}

/// `Σ_{x,t} f(M(x + v(x), t+1), M(x,t))`.
pub fn temporal_value(maps: &[Heatmap], flows: &[FlowField], w: &LossWeights) -> f64 {
    let mut total = 0.0;
    for t in 0..maps.len().saturating_sub(1) {
        let (cur, next, flow) = (&maps[t], &maps[t + 1], &flows[t]);
        let (width, height) = cur.dims();
        for y in 0..height {
            for x in 0..width {
                let (u, v) = flow.at(x, y);
                let d = flow_sample(next, x, y, u, v) - w.w_of * cur.get(x, y);
                total += hinge(d, w.c1, w.c2).0;
            }
        }
    }
    total
}

pub fn temporal_grad(maps: &[Heatmap], flows: &[FlowField], w: &LossWeights, scale: f64, out: &mut [Heatmap]) {
    for t in 0..maps.len().saturating_sub(1) {
        let (cur, next, flow) = (&maps[t], &maps[t + 1], &flows[t]);
        let (width, height) = cur.dims();
        for y in 0..height {
            for x in 0..width {
                let (u, v) = flow.at(x, y);
                let (taps, n) = flow_taps(next, x, y, u, v);
                let a: f64 = taps[..n].iter().map(|&(i, wt)| wt * next.data()[i]).sum();
                let d = a - w.w_of * cur.get(x, y);
                let g = hinge(d, w.c1, w.c2).1;
                if g == 0.0 {
                    continue;
                }
                let i = cur.index(x, y);
                out[t].data_mut()[i] -= scale * g * w.w_of;
                for &(j, wt) in &taps[..n] {
                    out[t + 1].data_mut()[j] += scale * g * wt;
                }
            }
        }
    }
}

/// Signs of every hinge argument, used to detect finite-difference steps that cross a kink.
fn temporal_hinge_signs(maps: &[Heatmap], flows: &[FlowField], w: &LossWeights) -> Vec<i8> {
    let mut signs = vec![];
    for t in 0..maps.len().saturating_sub(1) {
        let (cur, next, flow) = (&maps[t], &maps[t + 1], &flows[t]);
        for y in 0..cur.height() {
            for x in 0..cur.width() {
                let (u, v) = flow.at(x, y);
                let d = flow_sample(next, x, y, u, v) - w.w_of * cur.get(x, y);
                signs.push(d.partial_cmp(&0.0).map_or(0, |o| o as i8));
            }
        }
    }
    signs
}

/// `Σ_{x,t} ((1 − ε_DEC)·M(x,t) − M(x,t+1))²`.
pub fn decay_value(maps: &[Heatmap], eps_dec: f64) -> f64 {
    maps.windows(2)
        .map(|p| {
            p[0].data()
                .iter()
                .zip(p[1].data())
                .map(|(a, b)| ((1.0 - eps_dec) * a - b).powi(2))
                .sum::<f64>()
        })
        .sum()
}

pub fn decay_grad(maps: &[Heatmap], eps_dec: f64, scale: f64, out: &mut [Heatmap]) {
    let k = 1.0 - eps_dec;
    for t in 0..maps.len().saturating_sub(1) {
        for i in 0..maps[t].len() {
            let r = k * maps[t].data()[i] - maps[t + 1].data()[i];
            out[t].data_mut()[i] += 2.0 * scale * r * k;
            out[t + 1].data_mut()[i] -= 2.0 * scale * r;
        }
    }
}

/// `Σ_t (Σ_x M(x,t) − Σ_x M(x,t+1))²` over consecutive pairs.
pub fn capacity_value(maps: &[Heatmap]) -> f64 {
    let sums: Vec<f64> = maps.iter().map(Heatmap::sum).collect();
    sums.windows(2).map(|p| (p[0] - p[1]).powi(2)).sum()
}

pub fn capacity_grad(maps: &[Heatmap], scale: f64, out: &mut [Heatmap]) {
    let sums: Vec<f64> = maps.iter().map(Heatmap::sum).collect();
    for t in 0..maps.len().saturating_sub(1) {
        let r = 2.0 * scale * (sums[t] - sums[t + 1]);
        for v in out[t].data_mut() {
            *v += r;
        }
        for v in out[t + 1].data_mut() {
            *v -= r;
        }
    }
}

// ---------------------------------------------------------------------------
// batch-level terms

/// Which map a consistency term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Gaze,
    Awareness,
}

fn pick(frame: &BatchFrame, which: MapKind) -> &Heatmap {
    match which {
        MapKind::Gaze => &frame.gaze_density,
        MapKind::Awareness => &frame.awareness,
    }
}

/// Shared absolute frame range of two runs.
fn overlap(a: &SequenceBatch, b: &SequenceBatch) -> Option<std::ops::Range<usize>> {
    let lo = a.start.max(b.start);
    let hi = (a.start + a.len()).min(b.start + b.len());
    (lo < hi).then_some(lo..hi)
}

pub fn loss_gaze_nll(batch: &SequenceBatch) -> Result<f64> {
    if batch.valid_gaze_count() == 0 {
        return Err(Error::NoValidPoints);
    }
    let dens: Vec<Heatmap> = batch.frames.iter().map(|f| f.gaze_density.clone()).collect();
    Ok(gaze_nll_value(&dens, &batch.gaze()))
}

/// Returns `(value, skipped)`; an empty annotation set is skipped with value 0.
pub fn loss_att(batch: &SequenceBatch) -> (f64, bool) {
    let ann = batch.local_annotations();
    if ann.is_empty() {
        return (0.0, true);
    }
    (att_value(&batch.awareness(), &ann), false)
}

pub fn loss_aa(batch: &SequenceBatch) -> f64 {
    aa_value(&batch.awareness(), &batch.gaze())
}

pub fn loss_temporal(batch: &SequenceBatch, w: &LossWeights) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::Invalid("temporal term needs at least two frames".into()));
    }
    Ok(temporal_value(&batch.awareness(), &batch.flows()?, w))
}

pub fn loss_decay(batch: &SequenceBatch, w: &LossWeights) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::Invalid("decay term needs at least two frames".into()));
    }
    Ok(decay_value(&batch.awareness(), w.eps_dec))
}

pub fn loss_capacity(batch: &SequenceBatch) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::Invalid("capacity term needs at least two frames".into()));
    }
    Ok(capacity_value(&batch.awareness()))
}

/// `Σ (φ_a − φ_b)²` over the shared frames and all pixels.
pub fn loss_consistency(a: &SequenceBatch, b: &SequenceBatch, which: MapKind) -> Result<f64> {
    let range = overlap(a, b).ok_or(Error::NoOverlap)?;
    let mut total = 0.0;
    for t in range {
        let pa = pick(&a.frames[t - a.start], which);
        let pb = pick(&b.frames[t - b.start], which);
        pb.check_dims(pa.width(), pa.height())?;
        total += pa
            .data()
            .iter()
            .zip(pb.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

fn spatial_sum(batch: &SequenceBatch, which: MapKind) -> f64 {
    batch
        .frames
        .iter()
        .map(|f| spatial_value_weighted(pick(f, which), &spatial_weights(&f.image)))
        .sum()
}

/// Unweighted value of one term; `None` when its preconditions are not met.
pub fn term_value(batch: &SequenceBatch, w: &LossWeights, term: Term, other: Option<&SequenceBatch>) -> Option<f64> {
    match term {
        Term::Gaze => loss_gaze_nll(batch).ok(),
        Term::Att => match loss_att(batch) {
            (_, true) => None,
            (v, false) => Some(v),
        },
        Term::Aa => (batch.valid_gaze_count() > 0).then(|| loss_aa(batch)),
        Term::SpatialA => Some(spatial_sum(batch, MapKind::Awareness)),
        Term::SpatialG => Some(spatial_sum(batch, MapKind::Gaze)),
        Term::Temporal => loss_temporal(batch, w).ok(),
        Term::Decay => loss_decay(batch, w).ok(),
        Term::Capacity => loss_capacity(batch).ok(),
        Term::ConsistencyG => other.and_then(|o| loss_consistency(batch, o, MapKind::Gaze).ok()),
        Term::ConsistencyA => other.and_then(|o| loss_consistency(batch, o, MapKind::Awareness).ok()),
    }
}

/// One row of a loss report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermReport {
    pub term: Term,
    pub value: f64,
    pub weighted: f64,
    pub skipped: bool,
}

/// Weighted total with per-term breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub terms: Vec<TermReport>,
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, term: Term) -> &TermReport {
        self.terms.iter().find(|r| r.term == term).expect("every term is reported")
    }

    /// CSV with header `term,value,weighted,skipped`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("term,value,weighted,skipped\n");
        for r in &self.terms {
            s.push_str(&format!("{},{:.9e},{:.9e},{}\n", r.term, r.value, r.weighted, r.skipped));
        }
        s.push_str(&format!("total,,{:.9e},\n", self.total));
        s
    }
}

/// `Σ α_i · term_i`, skipping terms whose preconditions fail.
pub fn total_loss(batch: &SequenceBatch, w: &LossWeights, other: Option<&SequenceBatch>) -> LossReport {
    let terms: Vec<TermReport> = Term::ALL
        .iter()
        .map(|&term| match term_value(batch, w, term, other) {
            Some(value) => TermReport {
                term,
                value,
                weighted: w.alpha(term) * value,
                skipped: false,
            },
            None => TermReport {
                term,
                value: 0.0,
                weighted: 0.0,
                skipped: true,
            },
        })
        .collect();
    let total = terms.iter().map(|r| r.weighted).sum();
    LossReport { terms, total }
}

/// Gradients with respect to every awareness and gaze-density map of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub awareness: Vec<Heatmap>,
    pub gaze_density: Vec<Heatmap>,
}

impl Gradient {
    pub fn zeros_like(batch: &SequenceBatch) -> Self {
        let (w, h) = batch.dims();
        Self {
            awareness: vec![Heatmap::zeros(w, h); batch.len()],
            gaze_density: vec![Heatmap::zeros(w, h); batch.len()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.awareness
            .iter()
            .chain(&self.gaze_density)
            .flat_map(|m| m.data())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

fn add_term_grad(
    batch: &SequenceBatch,
    w: &LossWeights,
    term: Term,
    other: Option<&SequenceBatch>,
    scale: f64,
    g: &mut Gradient,
) -> Result<()> {
    let aw = batch.awareness();
    match term {
        Term::Gaze => {
            let dens: Vec<Heatmap> = batch.frames.iter().map(|f| f.gaze_density.clone()).collect();
            gaze_nll_grad(&dens, &batch.gaze(), scale, &mut g.gaze_density);
        }
        Term::Att => att_grad(&aw, &batch.local_annotations(), scale, &mut g.awareness),
        Term::Aa => aa_grad(&aw, &batch.gaze(), scale, &mut g.awareness),
        Term::SpatialA | Term::SpatialG => {
            let which = if term == Term::SpatialA {
                MapKind::Awareness
            } else {
                MapKind::Gaze
            };
            for (i, f) in batch.frames.iter().enumerate() {
                let out = match which {
                    MapKind::Awareness => &mut g.awareness[i],
                    MapKind::Gaze => &mut g.gaze_density[i],
                };
                spatial_grad_weighted(pick(f, which), &spatial_weights(&f.image), scale, out);
            }
        }
        Term::Temporal => {
            if batch.len() >= 2 {
                temporal_grad(&aw, &batch.flows()?, w, scale, &mut g.awareness);
            }
        }
        Term::Decay => decay_grad(&aw, w.eps_dec, scale, &mut g.awareness),
        Term::Capacity => capacity_grad(&aw, scale, &mut g.awareness),
        Term::ConsistencyG | Term::ConsistencyA => {
            let Some(o) = other else { return Ok(()) };
            let Some(range) = overlap(batch, o) else { return Ok(()) };
            let which = if term == Term::ConsistencyG {
                MapKind::Gaze
            } else {
                MapKind::Awareness
            };
            for t in range {
                let i = t - batch.start;
                let pa = pick(&batch.frames[i], which);
                let pb = pick(&o.frames[t - o.start], which);
                let out = match which {
                    MapKind::Awareness => &mut g.awareness[i],
                    MapKind::Gaze => &mut g.gaze_density[i],
                };
                for ((gv, a), b) in out.data_mut().iter_mut().zip(pa.data()).zip(pb.data()) {
                    *gv += 2.0 * scale * (a - b);
                }
            }
        }
    }
    Ok(())
}

/// Analytic gradient of one unweighted term.
pub fn grad(batch: &SequenceBatch, w: &LossWeights, term: Term, other: Option<&SequenceBatch>) -> Result<Gradient> {
    let mut g = Gradient::zeros_like(batch);
    add_term_grad(batch, w, term, other, 1.0, &mut g)?;
    Ok(g)
}

/// Gradient of the weighted total over all non-skipped terms.
pub fn total_grad(batch: &SequenceBatch, w: &LossWeights, other: Option<&SequenceBatch>) -> Result<Gradient> {
    let mut g = Gradient::zeros_like(batch);
    for term in Term::ALL {
        let a = w.alpha(term);
        if a != 0.0 && term_value(batch, w, term, other).is_some() {
            add_term_grad(batch, w, term, other, a, &mut g)?;
        }
    }
    Ok(g)
}

fn slot_mut(b: &mut SequenceBatch, kind: MapKind, t: usize, i: usize) -> &mut f64 {
    match kind {
        MapKind::Awareness => &mut b.frames[t].awareness.data_mut()[i],
        MapKind::Gaze => &mut b.frames[t].gaze_density.data_mut()[i],
    }
}

/// Outcome of comparing analytic and central-difference gradients for one term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub term: Term,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Variables skipped because the difference stencil straddles a hinge.
    pub skipped: usize,
}

/// Elementwise `|a − n| / max(|a|, |n|, 1e-6·‖a‖∞)`, maximised over all map entries.
pub fn gradcheck(
    batch: &SequenceBatch,
    w: &LossWeights,
    term: Term,
    other: Option<&SequenceBatch>,
    h: f64,
) -> Result<GradCheck> {
    let analytic = grad(batch, w, term, other)?;
    let floor = 1e-6 * analytic.max_abs().max(1e-6);
    let eval = |b: &SequenceBatch| term_value(b, w, term, other).unwrap_or(0.0);
    let flows = if term == Term::Temporal { batch.flows().ok() } else { None };
    let signs_of = |b: &SequenceBatch| flows.as_ref().map(|f| temporal_hinge_signs(&b.awareness(), f, w));

    let mut work = batch.clone();
    let mut max_rel = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for kind in [MapKind::Awareness, MapKind::Gaze] {
        for t in 0..batch.len() {
            let n = batch.frames[t].image.len();
            for i in 0..n {
                let orig = *slot_mut(&mut work, kind, t, i);
                *slot_mut(&mut work, kind, t, i) = orig + h;
                let fp = eval(&work);
                let sp = signs_of(&work);
                *slot_mut(&mut work, kind, t, i) = orig - h;
                let fm = eval(&work);
                let sm = signs_of(&work);
                *slot_mut(&mut work, kind, t, i) = orig;
                if sp != sm {
                    skipped += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * h);
                let a = match kind {
                    MapKind::Awareness => analytic.awareness[t].data()[i],
                    MapKind::Gaze => analytic.gaze_density[t].data()[i],
                };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                max_rel = max_rel.max(rel);
                checked += 1;
            }
        }
    }
    Ok(GradCheck {
        term,
        max_rel_error: max_rel,
        checked,
        skipped,
    })
}

/// All-zero batch with uniform gaze density, zero flow and blinks.
pub fn blank_batch(w: usize, h: usize, t: usize) -> SequenceBatch {
    let frames = (0..t)
        .map(|i| BatchFrame {
            image: Heatmap::zeros(w, h),
            awareness: Heatmap::zeros(w, h),
            gaze_density: DensityMap::uniform(w, h).into_heatmap(),
            flow: (i + 1 < t).then(|| FlowField::zeros(w, h)),
            gaze: GazeFrame::blink(i),
        })
        .collect();
    SequenceBatch::new(0, frames, vec![]).expect("blank batch is valid")
}

/// Batch with uniformly random images, maps, flow (|v| < 1.5 px), gaze and six annotations.
pub fn random_batch(w: usize, h: usize, t: usize, seed: u64) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = blank_batch(w, h, t);
    for (i, f) in b.frames.iter_mut().enumerate() {
        f.image = Heatmap::from_fn(w, h, |_, _| rng.gen());
        f.awareness = Heatmap::from_fn(w, h, |_, _| rng.gen());
        f.gaze_density = normalize(&Heatmap::from_fn(w, h, |_, _| rng.gen()))
            .expect("positive mass")
            .into_heatmap();
        let u = (0..w * h).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let v = (0..w * h).map(|_| rng.gen_range(-1.5..1.5)).collect();
        if i + 1 < t {
            f.flow = Some(FlowField::from_planes(w, h, u, v).expect("plane sizes match"));
        }
        f.gaze = GazeFrame::new(
            i,
            [[rng.gen(), rng.gen()], [rng.gen(), rng.gen()], [rng.gen(), rng.gen()]],
            [true, rng.gen_bool(0.7), true],
        )
        .expect("points in [0,1]");
    }
    b.annotations = (0..6)
        .map(|_| AnnotationRecord::new(rng.gen_range(0..t), rng.gen(), rng.gen(), rng.gen()).expect("valid"))
        .collect();
    b
}

/// 16×9×4 random batch whose gaze density is half random, half a splat around the
/// gaze points, so that the log term is well conditioned for finite differences.
pub fn gradcheck_batch(seed: u64) -> SequenceBatch {
    let (w, h) = (16, 9);
    let mut b = random_batch(w, h, 4, seed);
    for f in &mut b.frames {
        let splat = gaussian_splat(&f.gaze, 0.05, w, h).expect("valid gaze");
        let data = f.gaze_density.data().iter().zip(splat.data()).map(|(a, s)| 0.5 * a + 0.5 * s).collect();
        f.gaze_density = Heatmap::from_vec(w, h, data).expect("same dims");
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_batch(w: usize, h: usize, t: usize) -> SequenceBatch {
        blank_batch(w, h, t)
    }

    fn random_batch(seed: u64) -> SequenceBatch {
        super::random_batch(16, 9, 4, seed)
    }

    #[test]
    fn gaze_nll_cases() {
        let mut b = plain_batch(8, 6, 1);
        b.frames[0].gaze = GazeFrame::single(0, 0.4, 0.6);
        let v = loss_gaze_nll(&b).unwrap();
        assert!((v - 48f64.ln()).abs() < 1e-9);
        // delta at the gaze pixel
        let mut d = Heatmap::zeros(8, 6);
        d.set(7, 5, 1.0);
        b.frames[0].gaze_density = d;
        b.frames[0].gaze = GazeFrame::single(0, 1.0, 1.0);
        assert!(loss_gaze_nll(&b).unwrap().abs() < 1e-9);
        b.frames[0].gaze = GazeFrame::blink(0);
        assert!(matches!(loss_gaze_nll(&b), Err(Error::NoValidPoints)));
    }

    #[test]
    fn gaze_nll_sums_points() {
        let b = random_batch(11);
        let mut total = 0.0;
        for f in &b.frames {
            for slot in 0..3 {
                if f.gaze.valid[slot] {
                    let p = f.gaze.points[slot];
                    let one = GazeFrame::single(f.gaze.frame_index, p[0], p[1]);
                    let mut single = b.clone();
                    for g in &mut single.frames {
                        g.gaze = GazeFrame::blink(0);
                    }
                    let idx = f.gaze.frame_index;
                    single.frames[idx].gaze = one;
                    total += loss_gaze_nll(&single).unwrap();
                }
            }
        }
        assert!((loss_gaze_nll(&b).unwrap() - total).abs() < 1e-9);
    }

    #[test]
    fn att_cases() {
        let mut b = plain_batch(5, 5, 2);
        assert_eq!(loss_att(&b), (0.0, true));
        b.frames[1].awareness = Heatmap::filled(5, 5, 0.5);
        b.annotations = vec![AnnotationRecord::new(1, 0.5, 0.5, 1.0).unwrap()];
        assert_eq!(loss_att(&b), (0.25, false));
        b.annotations[0].label = 0.5;
        assert_eq!(loss_att(&b).0, 0.0);

        let b = random_batch(12);
        let mut naive = 0.0;
        for a in &b.annotations {
            let m = &b.frames[a.frame].awareness;
            let v = m.sample(a.x * 15.0, a.y * 8.0);
            naive += (v - a.label) * (v - a.label);
        }
        assert!((loss_att(&b).0 - naive).abs() < 1e-12);
    }

    #[test]
    fn aa_cases() {
        let mut b = plain_batch(5, 5, 1);
        b.frames[0].gaze = GazeFrame::single(0, 0.25, 0.75);
        b.frames[0].awareness.set(1, 3, 1.0);
        assert_eq!(loss_aa(&b), 0.0);
        b.frames[0].awareness.set(1, 3, 0.0);
        assert_eq!(loss_aa(&b), 1.0);

        let b = random_batch(13);
        let mut naive = 0.0;
        for f in &b.frames {
            for (p, ok) in f.gaze.points.iter().zip(f.gaze.valid) {
                if ok {
                    let v = f.awareness.sample(p[0] * 15.0, p[1] * 8.0);
                    naive += (v - 1.0).powi(2);
                }
            }
        }
        assert!((loss_aa(&b) - naive).abs() < 1e-12);
    }

    #[test]
    fn spatial_cases() {
        let img = Heatmap::zeros(10, 6);
        assert_eq!(loss_spatial(&Heatmap::filled(10, 6, 0.3), &img).unwrap(), 0.0);
        let ramp = Heatmap::from_fn(10, 6, |x, _| 0.1 * x as f64);
        let closed = 60.0 * 0.01 / SPATIAL_EPS.sqrt();
        assert!((loss_spatial(&ramp, &img).unwrap() - closed).abs() < 1e-9);
        let step = Heatmap::from_fn(10, 6, |x, _| if x >= 5 { 1.0 } else { 0.0 });
        let edge_img = step.clone();
        assert!(loss_spatial(&step, &edge_img).unwrap() < loss_spatial(&step, &img).unwrap());
    }

    #[test]
    fn temporal_cases() {
        let w = LossWeights::default();
        let mut b = plain_batch(4, 4, 2);
        b.frames[0].awareness = Heatmap::filled(4, 4, 0.6);
        b.frames[1].awareness = Heatmap::filled(4, 4, 0.3);
        assert_eq!(loss_temporal(&b, &w).unwrap(), 0.0);

        let mut one = plain_batch(2, 2, 2);
        one.frames[0].awareness.set(0, 0, 1.0);
        // a = 0, b = 1: d = -0.5, c2·0.25
        assert!((loss_temporal(&one, &w).unwrap() - 0.25).abs() < 1e-15);
        one.frames[1].awareness.set(0, 0, 0.5);
        assert_eq!(loss_temporal(&one, &w).unwrap(), 0.0);

        one.frames[0].flow = None;
        assert!(matches!(loss_temporal(&one, &w), Err(Error::MissingFlow(0, 1))));
    }

    #[test]
    fn temporal_translation_invariance() {
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (wd, ht) = (20, 16);
        let base = Heatmap::from_fn(wd, ht, |x, y| {
            if (5..15).contains(&x) && (4..12).contains(&y) { rng.gen() } else { 0.0 }
        });
        let next = base.map(|v| 0.7 * v);
        let shifted = Heatmap::from_fn(wd, ht, |x, y| if x >= 2 { next.get(x - 2, y) } else { 0.0 });
        let mut still = plain_batch(wd, ht, 2);
        still.frames[0].awareness = base.clone();
        still.frames[1].awareness = next;
        let mut moving = still.clone();
        moving.frames[1].awareness = shifted;
        moving.frames[0].flow = Some(FlowField::constant(wd, ht, 2.0, 0.0));
        let a = loss_temporal(&still, &w).unwrap();
        let b = loss_temporal(&moving, &w).unwrap();
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn decay_cases() {
        let w = LossWeights::default();
        let mut b = plain_batch(3, 3, 2);
        b.frames[0].awareness = Heatmap::filled(3, 3, 0.5);
        b.frames[1].awareness = Heatmap::filled(3, 3, 0.4);
        assert!(loss_decay(&b, &w).unwrap() < 1e-30);
        b.frames[0].awareness = Heatmap::filled(3, 3, 1.0);
        b.frames[1].awareness = Heatmap::filled(3, 3, 1.0);
        assert!((loss_decay(&b, &w).unwrap() - 9.0 * 0.04).abs() < 1e-12);

        let b = random_batch(15);
        let mut naive = 0.0;
        for t in 0..3 {
            for i in 0..144 {
                let r = 0.8 * b.frames[t].awareness.data()[i] - b.frames[t + 1].awareness.data()[i];
                naive += r * r;
            }
        }
        assert!((loss_decay(&b, &w).unwrap() - naive).abs() < 1e-9);
    }

    #[test]
    fn capacity_cases() {
        let mut b = plain_batch(2, 5, 2);
        b.frames[0].awareness = Heatmap::filled(2, 5, 1.0);
        b.frames[1].awareness = Heatmap::filled(2, 5, 1.2);
        assert!((loss_capacity(&b).unwrap() - 4.0).abs() < 1e-9);
        b.frames[1].awareness = Heatmap::from_fn(2, 5, |x, _| 2.0 * x as f64);
        assert!(loss_capacity(&b).unwrap().abs() < 1e-12);

        let b = random_batch(16);
        let s: Vec<f64> = b.frames.iter().map(|f| f.awareness.data().iter().sum()).collect();
        let naive: f64 = (0..3).map(|t| (s[t] - s[t + 1]).powi(2)).sum();
        assert!((loss_capacity(&b).unwrap() - naive).abs() < 1e-9);
    }

    #[test]
    fn consistency_cases() {
        let b = random_batch(17);
        assert_eq!(loss_consistency(&b, &b, MapKind::Awareness).unwrap(), 0.0);
        let mut a = plain_batch(4, 4, 1);
        let mut c = a.clone();
        c.frames[0].awareness = Heatmap::filled(4, 4, 0.1);
        a.start = 3;
        c.start = 3;
        assert!((loss_consistency(&a, &c, MapKind::Awareness).unwrap() - 0.16).abs() < 1e-12);
        c.start = 5;
        assert!(matches!(loss_consistency(&a, &c, MapKind::Awareness), Err(Error::NoOverlap)));

        // overlapping runs offset by one frame
        let mut x = random_batch(18);
        let mut y = random_batch(19);
        x.start = 0;
        y.start = 1;
        let mut naive = 0.0;
        for t in 1..4 {
            let p = &x.frames[t].gaze_density;
            let q = &y.frames[t - 1].gaze_density;
            for i in 0..p.len() {
                naive += (p.data()[i] - q.data()[i]).powi(2);
            }
        }
        assert!((loss_consistency(&x, &y, MapKind::Gaze).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        let b = plain_batch(6, 4, 3);
        let rep = total_loss(&b, &w, None);
        assert_eq!(rep.total, 0.0);
        assert!(rep.get(Term::Gaze).skipped && rep.get(Term::Att).skipped && rep.get(Term::Aa).skipped);
        for t in [Term::SpatialA, Term::Temporal, Term::Decay, Term::Capacity] {
            assert!(!rep.get(t).skipped);
            assert_eq!(rep.get(t).value, 0.0);
        }

        let b = random_batch(20);
        let mut single = LossWeights::zeroed();
        single.alpha_dec = 3.5;
        let rep = total_loss(&b, &single, None);
        assert!((rep.total - 3.5 * loss_decay(&b, &single).unwrap()).abs() < 1e-9);

        let rep = total_loss(&b, &w, None);
        let hand = w.alpha_g * loss_gaze_nll(&b).unwrap()
            + w.alpha_att * loss_att(&b).0
            + w.alpha_aa * loss_aa(&b)
            + w.alpha_s_a * b.frames.iter().map(|f| loss_spatial(&f.awareness, &f.image).unwrap()).sum::<f64>()
            + w.alpha_s_g * b.frames.iter().map(|f| loss_spatial(&f.gaze_density, &f.image).unwrap()).sum::<f64>()
            + w.alpha_t * loss_temporal(&b, &w).unwrap()
            + w.alpha_dec * loss_decay(&b, &w).unwrap()
            + w.alpha_cap * loss_capacity(&b).unwrap();
        assert!((rep.total - hand).abs() <= 1e-9 * hand.abs());
        assert!(rep.get(Term::ConsistencyA).skipped);
        assert!(rep.to_csv().starts_with("term,value,weighted,skipped\n"));
    }

    #[test]
    fn total_linear_in_alpha() {
        let b = random_batch(21);
        let w = LossWeights::default();
        let base = total_loss(&b, &w, None).total;
        let mut w2 = w;
        w2.alpha_aa *= 3.0;
        let bumped = total_loss(&b, &w2, None).total;
        assert!((bumped - base - 2.0 * w.alpha_aa * loss_aa(&b)).abs() <= 1e-9 * base.abs());
    }

    #[test]
    fn decay_gradient_zero_at_exact_decay() {
        let w = LossWeights::default();
        let mut b = plain_batch(6, 5, 3);
        b.frames[0].awareness = Heatmap::from_fn(6, 5, |x, y| (x + y) as f64 / 10.0);
        b.frames[1].awareness = b.frames[0].awareness.map(|v| 0.8 * v);
        b.frames[2].awareness = b.frames[1].awareness.map(|v| 0.8 * v);
        let g = grad(&b, &w, Term::Decay, None).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn aa_gradient_at_point() {
        let w = LossWeights::default();
        let mut b = plain_batch(5, 5, 1);
        b.frames[0].awareness = Heatmap::filled(5, 5, 0.5);
        b.frames[0].gaze = GazeFrame::single(0, 0.5, 0.5);
        let g = grad(&b, &w, Term::Aa, None).unwrap();
        assert_eq!(g.awareness[0].get(2, 2), -1.0);
        assert_eq!(g.awareness[0].sum(), -1.0);
    }

    #[test]
    fn unknown_term_id() {
        assert!(matches!("nope".parse::<Term>(), Err(Error::UnknownTerm(_))));
        for t in Term::ALL {
            assert_eq!(t.name().parse::<Term>().unwrap(), t);
        }
    }

    #[test]
    fn all_terms_pass_gradcheck() {
        let w = LossWeights::default();
        let b = gradcheck_batch(22);
        let mut other = random_batch(23);
        other.start = 1;
        for term in Term::ALL {
            let r = gradcheck(&b, &w, term, Some(&other), 1e-4).unwrap();
            assert!(r.max_rel_error < 1e-4, "{term}: {}", r.max_rel_error);
            assert!(r.checked > 0);
        }
    }
}
