//! Attended-awareness estimators: the filtered-gaze (FG) baseline, a recursive
//! estimator built from the deposit/advect/decay axioms, and a variational
//! estimator that minimizes the awareness objective directly over the map sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    advect, advect_point, sigma_to_pixels, stamp_gaussian, FlowField, GazeFrame, Heatmap,
};
use crate::objective::{
    aa_grad, aa_value, att_grad, att_value, capacity_grad, capacity_value, decay_grad, decay_value,
    local_annotations, spatial_grad_weighted, spatial_value_weighted, spatial_weights,
    temporal_grad, temporal_value, AnnotationRecord, LossWeights, SequenceBatch,
};
use crate::par::par_range_map;

/// Parameters shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Width of the awareness deposit around each gaze point (normalized, diagonal-relative).
    pub deposit_sigma: f64,
    /// FG kernel width for a fresh sample.
    pub fg_sigma0: f64,
    /// FG kernel growth per frame of age.
    pub fg_sigma_growth: f64,
    /// FG amplitude factor per frame of age.
    pub fg_amplitude_decay: f64,
    /// FG samples whose amplitude falls below this are dropped.
    pub fg_min_amplitude: f64,
    /// Upper bound on total awareness as a fraction of `W·H`.
    pub capacity_budget: f64,
    /// Initial projected-gradient step.
    pub step_size: f64,
    pub max_iterations: usize,
    /// Relative loss improvement below which the optimizer stops.
    pub tolerance: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            deposit_sigma: 0.0347,
            fg_sigma0: 0.0347,
            fg_sigma_growth: 0.01,
            fg_amplitude_decay: 0.8,
            fg_min_amplitude: 1e-4,
            capacity_budget: 0.05,
            step_size: 1e-2,
            max_iterations: 500,
            tolerance: 1e-7,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("deposit_sigma", self.deposit_sigma),
            ("fg_sigma0", self.fg_sigma0),
            ("fg_sigma_growth", self.fg_sigma_growth),
            ("fg_amplitude_decay", self.fg_amplitude_decay),
            ("fg_min_amplitude", self.fg_min_amplitude),
            ("step_size", self.step_size),
            ("tolerance", self.tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.capacity_budget > 0.0 && self.capacity_budget <= 1.0) {
            return Err(Error::Config(format!(
                "capacity_budget must be in (0,1], got {}",
                self.capacity_budget
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// A sequence of awareness maps with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AwarenessSequence {
    frames: Vec<Heatmap>,
}

impl AwarenessSequence {
    pub fn new(frames: Vec<Heatmap>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let (w, h) = first.dims();
            for f in &frames {
                f.check_dims(w, h)?;
                if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Invalid("awareness values must lie in [0,1]".into()));
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Heatmap] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Heatmap> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.frames.iter().map(Heatmap::sum).collect()
    }
}

fn check_lengths(gaze: &[GazeFrame], flows: &[FlowField]) -> Result<()> {
    let t = gaze.len();
    if flows.len() + 1 != t && flows.len() != t {
        return Err(Error::LengthMismatch {
            what: "flow sequence",
            expected: t.saturating_sub(1),
            got: flows.len(),
        });
    }
    Ok(())
}

fn check_flow_dims(flows: &[FlowField], width: usize, height: usize) -> Result<()> {
    for f in flows {
        if f.dims() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: f.dims(),
            });
        }
    }
    Ok(())
}

/// Filtered-gaze baseline. Every past valid sample is carried forward along the
/// flow and contributes a Gaussian whose width grows and whose amplitude decays
/// with age; contributions combine by per-pixel maximum.
pub fn fg_estimate(
    gaze: &[GazeFrame],
    flows: &[FlowField],
    width: usize,
    height: usize,
    config: &EstimatorConfig,
) -> Result<AwarenessSequence> {
    check_lengths(gaze, flows)?;
    check_flow_dims(flows, width, height)?;
    struct Sample {
        pos: [f64; 2],
        born: usize,
    }
    let mut samples: Vec<Sample> = Vec::new();
    let mut frames = Vec::with_capacity(gaze.len());
    for (t, g) in gaze.iter().enumerate() {
        samples.extend(g.valid_pixels(width, height).into_iter().map(|pos| Sample { pos, born: t }));
        let mut map = Heatmap::zeros(width, height);
        for s in &samples {
            let age = (t - s.born) as f64;
            let amplitude = config.fg_amplitude_decay.powf(age);
            if amplitude < config.fg_min_amplitude {
                continue;
            }
            let sigma = sigma_to_pixels(config.fg_sigma0 + config.fg_sigma_growth * age, width, height);
            stamp_gaussian(&mut map, s.pos, sigma, amplitude, f64::max);
        }
        map.clamp01();
        frames.push(map);
        if let Some(flow) = flows.get(t).filter(|_| t + 1 < gaze.len()) {
            let keep = config.fg_min_amplitude;
            samples.retain(|s| config.fg_amplitude_decay.powf((t + 1 - s.born) as f64) >= keep);
            for s in &mut samples {
                s.pos = advect_point(s.pos, flow);
            }
        }
    }
    AwarenessSequence::new(frames)
}

/// Unit-peak Gaussian around every valid gaze point, combined by maximum.
pub fn deposit(gaze: &GazeFrame, sigma: f64, width: usize, height: usize) -> Heatmap {
    let mut map = Heatmap::zeros(width, height);
    let sigma_px = sigma_to_pixels(sigma, width, height);
    for p in gaze.valid_pixels(width, height) {
        stamp_gaussian(&mut map, p, sigma_px, 1.0, f64::max);
    }
    map
}

/// Scale the map down so its total does not exceed `budget · W·H`.
fn enforce_budget(map: &mut Heatmap, budget: f64) {
    let limit = budget * map.len() as f64;
    let total = map.sum();
    if total > limit {
        let k = limit / total;
        for v in map.data_mut() {
            *v *= k;
        }
    }
}

/// One step of the recursive estimator: advect the previous map along the flow,
/// decay it by `(1 − ε_DEC)`, add the gaze deposit, clamp to `[0,1]` and enforce the budget.
pub fn recursive_step(
    prev: &Heatmap,
    gaze: &GazeFrame,
    flow: &FlowField,
    config: &EstimatorConfig,
    weights: &LossWeights,
) -> Result<Heatmap> {
    if prev.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Invalid("previous awareness must lie in [0,1]".into()));
    }
    let (w, h) = prev.dims();
    let moved = advect(prev, flow)?;
    let dep = deposit(gaze, config.deposit_sigma, w, h);
    let keep = 1.0 - weights.eps_dec;
    let data = moved
        .data()
        .iter()
        .zip(dep.data())
        .map(|(m, d)| (keep * m + d).clamp(0.0, 1.0))
        .collect();
    let mut next = Heatmap::from_vec(w, h, data)?;
    enforce_budget(&mut next, config.capacity_budget);
    Ok(next)
}

/// Folds [`recursive_step`] over the sequence from an all-zero map.
pub fn recursive_run(
    gaze: &[GazeFrame],
    flows: &[FlowField],
    width: usize,
    height: usize,
    config: &EstimatorConfig,
    weights: &LossWeights,
) -> Result<AwarenessSequence> {
    check_lengths(gaze, flows)?;
    check_flow_dims(flows, width, height)?;
    let still = FlowField::zeros(width, height);
    let mut frames: Vec<Heatmap> = Vec::with_capacity(gaze.len());
    for (t, g) in gaze.iter().enumerate() {
        let next = match frames.last() {
            None => recursive_step(&Heatmap::zeros(width, height), g, &still, config, weights)?,
            Some(prev) => recursive_step(prev, g, &flows[t - 1], config, weights)?,
        };
        frames.push(next);
    }
    AwarenessSequence::new(frames)
}

/// Result of [`variational_fit`].
#[derive(Debug, Clone)]
pub struct VariationalFit {
    pub sequence: AwarenessSequence,
    /// Objective at the returned sequence.
    pub loss: f64,
    /// Objective at the initialization.
    pub initial_loss: f64,
    /// Objective after every accepted step, starting with the initialization.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// The part of the objective that depends on the awareness maps alone.
struct AwarenessObjective {
    weights: LossWeights,
    gaze: Vec<GazeFrame>,
    flows: Vec<FlowField>,
    annotations: Vec<AnnotationRecord>,
    spatial: Vec<Vec<f64>>,
}

impl AwarenessObjective {
    fn new(batch: &SequenceBatch, weights: &LossWeights) -> Result<Self> {
        let flows = batch.flows()?;
        let spatial = par_range_map!(0..batch.len(), |i: usize| spatial_weights(&batch.frames[i].image));
        Ok(Self {
            weights: *weights,
            gaze: batch.gaze(),
            flows,
            annotations: batch.local_annotations(),
            spatial,
        })
    }

    fn value(&self, maps: &[Heatmap]) -> f64 {
        let w = &self.weights;
        let mut total = 0.0;
        if w.alpha_aa != 0.0 {
            total += w.alpha_aa * aa_value(maps, &self.gaze);
        }
        if w.alpha_att != 0.0 && !self.annotations.is_empty() {
            total += w.alpha_att * att_value(maps, &self.annotations);
        }
        if w.alpha_s_a != 0.0 {
            let parts = par_range_map!(0..maps.len(), |i: usize| spatial_value_weighted(&maps[i], &self.spatial[i]));
            total += w.alpha_s_a * parts.iter().sum::<f64>();
        }
        if maps.len() >= 2 {
            if w.alpha_t != 0.0 {
                total += w.alpha_t * temporal_value(maps, &self.flows, w);
            }
            if w.alpha_dec != 0.0 {
                total += w.alpha_dec * decay_value(maps, w.eps_dec);
            }
            if w.alpha_cap != 0.0 {
                total += w.alpha_cap * capacity_value(maps);
            }
        }
        total
    }

    fn gradient(&self, maps: &[Heatmap]) -> Vec<Heatmap> {
        let w = &self.weights;
        let (wd, ht) = maps[0].dims();
        let mut g = vec![Heatmap::zeros(wd, ht); maps.len()];
        if w.alpha_aa != 0.0 {
            aa_grad(maps, &self.gaze, w.alpha_aa, &mut g);
        }
        if w.alpha_att != 0.0 && !self.annotations.is_empty() {
            att_grad(maps, &self.annotations, w.alpha_att, &mut g);
        }
        if w.alpha_s_a != 0.0 {
            for (i, gi) in g.iter_mut().enumerate() {
                spatial_grad_weighted(&maps[i], &self.spatial[i], w.alpha_s_a, gi);
            }
        }
        if maps.len() >= 2 {
            if w.alpha_t != 0.0 {
                temporal_grad(maps, &self.flows, w, w.alpha_t, &mut g);
            }
            if w.alpha_dec != 0.0 {
                decay_grad(maps, w.eps_dec, w.alpha_dec, &mut g);
            }
            if w.alpha_cap != 0.0 {
                capacity_grad(maps, w.alpha_cap, &mut g);
            }
        }
        g
    }
}

fn project_step(maps: &[Heatmap], grad: &[Heatmap], step: f64) -> Vec<Heatmap> {
    maps.iter()
        .zip(grad)
        .map(|(m, g)| {
            let mut out = m.clone();
            for (o, d) in out.data_mut().iter_mut().zip(g.data()) {
                *o = (*o - step * d).clamp(0.0, 1.0);
            }
            out
        })
        .collect()
}

/// Directly minimizes `α_AA·L_AA + α_T·L_T + α_DEC·L_DEC + α_CAP·L_CAP + α_S,A·L_S,A`
/// (plus `α_ATT·L_ATT` when the batch carries annotations) over the awareness
/// sequence by projected gradient descent onto `[0,1]` with backtracking.
/// Initialized from [`recursive_run`] on the batch's gaze and flow; the batch's own
/// awareness maps are ignored.
pub fn variational_fit(batch: &SequenceBatch, weights: &LossWeights, config: &EstimatorConfig) -> Result<VariationalFit> {
    let (w, h) = batch.dims();
    let init = recursive_run(&batch.gaze(), &batch.flows()?, w, h, config, weights)?;
    variational_fit_from(batch, weights, config, init)
}

/// [`variational_fit`] from an explicit initialization.
pub fn variational_fit_from(
    batch: &SequenceBatch,
    weights: &LossWeights,
    config: &EstimatorConfig,
    init: AwarenessSequence,
) -> Result<VariationalFit> {
    weights.validate()?;
    config.validate()?;
    if init.len() != batch.len() {
        return Err(Error::LengthMismatch {
            what: "initial awareness",
            expected: batch.len(),
            got: init.len(),
        });
    }
    let objective = AwarenessObjective::new(batch, weights)?;
    let mut maps = init.into_frames();
    let mut loss = objective.value(&maps);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("initial objective {loss}")));
    }
    let initial_loss = loss;
    let mut history = vec![loss];
    let mut step = config.step_size;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let g = objective.gradient(&maps);
        let mut accepted = None;
        for _ in 0..60 {
            let trial = project_step(&maps, &g, step);
            let f = objective.value(&trial);
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("objective {f} at iteration {iterations}")));
            }
            if f < loss {
                accepted = Some((trial, f));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f)) = accepted else { break };
        let improvement = (loss - f) / loss.abs().max(f64::MIN_POSITIVE);
        maps = next;
        loss = f;
        history.push(loss);
        if improvement < config.tolerance {
            break;
        }
        step *= 2.0;
    }
    Ok(VariationalFit {
        sequence: AwarenessSequence::new(maps)?,
        loss,
        initial_loss,
        history,
        iterations,
    })
}

/// Mean squared error between the estimate and annotation labels, sampling the
/// estimate bilinearly. Annotations outside the sequence are ignored.
pub fn eval_awareness(estimate: &AwarenessSequence, annotations: &[AnnotationRecord]) -> Result<f64> {
    let local = local_annotations(annotations, 0, estimate.len());
    if local.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    Ok(att_value(estimate.frames(), &local) / local.len() as f64)
}
