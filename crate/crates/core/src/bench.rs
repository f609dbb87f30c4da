//! Experiment harness behind the CLI: synthetic benchmarks for denoising,
//! recalibration, awareness estimation and ablation, plus the gradient suite.
//!
//! Every benchmark fans out over independent cells (noise level × scene or run)
//! with sub-seeds derived from the base seed, so results do not depend on the
//! number of threads.

use serde::{Deserialize, Serialize};

use crate::awareness::{eval_awareness, fg_estimate, variational_fit, AwarenessSequence};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{gaussian_splat, to_normalized, to_pixel, DensityMap, GazeFrame, Heatmap, GAZE_SLOTS};
use crate::objective::{gradcheck, gradcheck_batch, random_batch, AnnotationRecord, BatchFrame, LossWeights, SequenceBatch, Term};
use crate::par::{derive_seed, par_map, par_range_map};
use crate::refine::{
    apply_noise, calibration_error, fit_correction, meanshift, Affine2D, CorrectionMode, CorrectionNet,
    CorrectionSettings, DenoiseCase, DenoiseRow, DenoiseSettings, MeanShiftConfig, NoiseModel,
};
use crate::saliency::{center_prior, cross_correlation, gaze_conditioned_density, information_gain, kl_divergence, FixationSet};
use crate::synth::{gen_ground_truth, GroundTruth, Package, ScanpathSpec, SceneSpec, DEFAULT_ANNOTATIONS};

pub const DENOISE_SIGMAS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];
pub const RECALIBRATION_SIGMAS: [f64; 3] = [0.1, 0.2, 0.3];
pub const AWARENESS_SIGMAS: [f64; 4] = [0.01, 0.05, 0.1, 0.15];
pub const DENOISE_SCENES: usize = 20;
pub const RECALIBRATION_RUNS: usize = 8;
pub const RECALIBRATION_SCENES_PER_RUN: usize = 4;
pub const AWARENESS_SCENES: usize = 5;
/// Awareness scenes are smaller than the denoising ones: the variational fit
/// costs a few seconds per sequence at this size.
pub const AWARENESS_DIMS: (usize, usize) = (120, 68);
/// Annotations per awareness scene; half fit the estimator, half score it.
pub const AWARENESS_ANNOTATIONS: usize = 2000;
/// Gaze noise level of the ablation runs.
pub const ABLATION_SIGMA: f64 = 0.05;
pub const GRADCHECK_SEEDS: usize = 5;
pub const GRADCHECK_STEP: f64 = 1e-4;

// stream ids for derive_seed, so the benchmarks never share random streams
const STREAM_SCENE: u64 = 1 << 32;
const STREAM_NOISE: u64 = 2 << 32;
const STREAM_CORRUPT: u64 = 3 << 32;
const STREAM_NET: u64 = 4 << 32;
const STREAM_GRAD: u64 = 5 << 32;
const STREAM_AWARE_SCENE: u64 = 6 << 32;

/// Ground truth for the `i`-th benchmark scene.
pub fn bench_scene(cfg: &Config, seed: u64, i: usize) -> Result<GroundTruth> {
    let spec = SceneSpec::default_for_seed(derive_seed(seed, STREAM_SCENE + i as u64));
    gen_ground_truth(&spec, &ScanpathSpec::default(), DEFAULT_ANNOTATIONS, &cfg.estimator, &cfg.weights)
}

pub fn bench_scenes(cfg: &Config, seed: u64, n: usize) -> Result<Vec<GroundTruth>> {
    par_range_map!(0..n, |i: usize| bench_scene(cfg, seed, i)).into_iter().collect()
}

/// Ground truth for the `i`-th awareness scene.
pub fn awareness_scene(cfg: &Config, seed: u64, i: usize) -> Result<GroundTruth> {
    let (w, h) = AWARENESS_DIMS;
    let spec = SceneSpec::random(w, h, 20, 3, derive_seed(seed, STREAM_AWARE_SCENE + i as u64))?;
    gen_ground_truth(&spec, &ScanpathSpec::default(), AWARENESS_ANNOTATIONS, &cfg.estimator, &cfg.weights)
}

pub fn awareness_scenes(cfg: &Config, seed: u64, n: usize) -> Result<Vec<GroundTruth>> {
    par_range_map!(0..n, |i: usize| awareness_scene(cfg, seed, i)).into_iter().collect()
}

pub fn scene_saliency(cfg: &Config, gt: &GroundTruth) -> Result<Vec<DensityMap>> {
    frame_saliency(cfg, &gt.scene.frames)
}

/// One saliency density per frame, from the configured provider.
pub fn frame_saliency(cfg: &Config, frames: &[Heatmap]) -> Result<Vec<DensityMap>> {
    let provider = cfg.saliency_provider();
    par_range_map!(0..frames.len(), |t: usize| provider.density(t, &frames[t]))
        .into_iter()
        .collect()
}

// ---------------------------------------------------------------------------
// denoising

pub fn denoise_settings(cfg: &Config, seed: u64) -> DenoiseSettings {
    DenoiseSettings {
        noise_w: cfg.noise.w,
        lambda: cfg.denoise.lambda,
        min_bandwidth: cfg.denoise.min_bandwidth,
        max_iterations: cfg.denoise.max_iterations,
        epsilon_px: cfg.denoise.epsilon_px,
        seed: derive_seed(seed, STREAM_NOISE),
    }
}

pub fn denoise_bench(cfg: &Config, seed: u64, sigmas: &[f64], n_scenes: usize) -> Result<Vec<DenoiseRow>> {
    let scenes = bench_scenes(cfg, seed, n_scenes)?;
    let cases = par_map!(scenes, |gt: &GroundTruth| -> Result<DenoiseCase> {
        Ok(DenoiseCase {
            true_gaze: gt.gaze.clone(),
            object_maps: (0..gt.scene.len()).map(|t| gt.scene.object_map(t)).collect(),
            saliency: scene_saliency(cfg, gt)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    crate::refine::denoise_benchmark(&cases, sigmas, &denoise_settings(cfg, seed))
}

/// Replaces every valid point by the meanshift mode of the gaze-conditioned density
/// started at that point. Points without kernel mass are kept.
pub fn denoise_gaze(cfg: &Config, noisy: &[GazeFrame], saliency: &[DensityMap], sigma_n: f64) -> Result<Vec<GazeFrame>> {
    let (w, h) = saliency.first().ok_or(Error::NoValidPoints)?.dims();
    let ms = MeanShiftConfig {
        max_iterations: cfg.denoise.max_iterations,
        epsilon_px: cfg.denoise.epsilon_px,
        ..MeanShiftConfig::for_noise(sigma_n, cfg.denoise.min_bandwidth, w, h)
    };
    let kernel = sigma_n.max(cfg.denoise.min_bandwidth);
    noisy
        .iter()
        .zip(saliency)
        .map(|(g, sal)| {
            if g.valid_count() == 0 {
                return Ok(*g);
            }
            let cond = gaze_conditioned_density(sal, g, cfg.denoise.lambda, kernel)?;
            let mut out = *g;
            for k in 0..GAZE_SLOTS {
                if !g.valid[k] {
                    continue;
                }
                let start = [to_pixel(g.points[k][0], w), to_pixel(g.points[k][1], h)];
                let p = match meanshift(start, &cond, &ms) {
                    Ok(p) => p,
                    Err(Error::NoKernelMass) => start,
                    Err(e) => return Err(e),
                };
                out.points[k] = [
                    to_normalized(p[0], w).clamp(0.0, 1.0),
                    to_normalized(p[1], h).clamp(0.0, 1.0),
                ];
            }
            Ok(out)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// recalibration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationRow {
    pub sigma_n: f64,
    pub before: f64,
    pub after: f64,
    pub runs: usize,
}

pub const RECALIBRATION_HEADER: &str = "sigma_n,before,after";

pub fn recalibration_csv(rows: &[RecalibrationRow]) -> String {
    let mut s = format!("{RECALIBRATION_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:.4},{:.4}\n", r.sigma_n, r.before, r.after));
    }
    s
}

fn correction_settings(cfg: &Config, seed: u64) -> CorrectionSettings {
    CorrectionSettings {
        hidden: cfg.correction.hidden,
        learning_rate: cfg.correction.learning_rate,
        epochs: cfg.correction.epochs,
        init_scale: cfg.correction.init_scale,
        weight_decay: cfg.correction.weight_decay,
        seed,
    }
}

/// One recalibration run: `(before, after)` calibration error.
pub fn recalibration_run(cfg: &Config, gts: &[GroundTruth], sigma_n: f64, supervised: bool, seed: u64) -> Result<(f64, f64)> {
    let corrupt = Affine2D::random_corruption(sigma_n, derive_seed(seed, STREAM_CORRUPT))?;
    let mut truth = Vec::new();
    let mut densities = Vec::new();
    let sal: Vec<Vec<DensityMap>> = if supervised {
        Vec::new()
    } else {
        gts.iter().map(|gt| scene_saliency(cfg, gt)).collect::<Result<_>>()?
    };
    for (s, gt) in gts.iter().enumerate() {
        for (t, g) in gt.gaze.iter().enumerate() {
            if let Some(p) = g.valid_points().next() {
                truth.push(p);
                if !supervised {
                    densities.push(&sal[s][t]);
                }
            }
        }
    }
    let observed: Vec<[f64; 2]> = truth.iter().map(|p| corrupt.apply(*p)).collect();
    let (w, h) = gts[0].scene.frames[0].dims();
    let mode = if supervised {
        CorrectionMode::Supervised {
            targets: &truth,
            sigma: cfg.correction.target_sigma,
        }
    } else {
        CorrectionMode::SelfSupervised { densities: &densities }
    };
    let fit = fit_correction(&observed, mode, w, h, &correction_settings(cfg, derive_seed(seed, STREAM_NET)))?;
    let before = calibration_error(&CorrectionNet::identity(cfg.correction.hidden), &corrupt)?;
    let after = calibration_error(&fit.net, &corrupt)?;
    Ok((before, after))
}

/// Mean calibration error before and after fitting, over `runs` seeded runs per level.
/// Each run draws its own corruption and uses the true scanpaths of `scenes_per_run` scenes.
pub fn recalibrate_bench(
    cfg: &Config,
    seed: u64,
    sigmas: &[f64],
    runs: usize,
    scenes_per_run: usize,
    supervised: bool,
) -> Result<Vec<RecalibrationRow>> {
    if runs == 0 {
        return Err(Error::Invalid("at least one run".into()));
    }
    let scenes = bench_scenes(cfg, seed, runs * scenes_per_run)?;
    let cells: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|i| (0..runs).map(move |r| (i, r))).collect();
    let results = par_map!(cells, |&(i, r): &(usize, usize)| {
        let gts = &scenes[r * scenes_per_run..(r + 1) * scenes_per_run];
        recalibration_run(cfg, gts, sigmas[i], supervised, derive_seed(seed, (i * runs + r) as u64))
    });
    let mut rows = Vec::new();
    for (i, &sigma_n) in sigmas.iter().enumerate() {
        let (mut before, mut after) = (0.0, 0.0);
        for (k, res) in results.iter().enumerate() {
            if cells[k].0 == i {
                let (b, a) = res.as_ref().map_err(|e| Error::Invalid(e.to_string()))?;
                before += b;
                after += a;
            }
        }
        rows.push(RecalibrationRow {
            sigma_n,
            before: before / runs as f64,
            after: after / runs as f64,
            runs,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// awareness

/// A noisy observation of one scene, ready for the estimators.
pub struct AwarenessCase {
    pub noisy: Vec<GazeFrame>,
    pub denoised: Vec<GazeFrame>,
    /// Batch for the variational estimator, carrying the fitting annotations.
    pub batch: SequenceBatch,
    /// Held-out annotations used for scoring.
    pub eval: Vec<AnnotationRecord>,
}

/// Splits annotations into a fitting half and a held-out half.
pub fn split_annotations(all: &[AnnotationRecord]) -> (Vec<AnnotationRecord>, Vec<AnnotationRecord>) {
    let mid = all.len() / 2;
    (all[..mid].to_vec(), all[mid..].to_vec())
}

pub fn awareness_case(cfg: &Config, gt: &GroundTruth, sigma_n: f64, seed: u64) -> Result<AwarenessCase> {
    let (w, h) = (gt.scene.width(), gt.scene.height());
    let model = NoiseModel::new(sigma_n, cfg.noise.w, seed)?;
    let noisy = apply_noise(&gt.gaze, &model)?;
    let saliency = scene_saliency(cfg, gt)?;
    let denoised = denoise_gaze(cfg, &noisy, &saliency, sigma_n)?;
    let (fit, eval) = split_annotations(&gt.annotations);
    let kernel = sigma_n.max(cfg.denoise.min_bandwidth);
    let frames = (0..gt.scene.len())
        .map(|t| {
            Ok(BatchFrame {
                image: gt.scene.frames[t].clone(),
                awareness: Heatmap::zeros(w, h),
                gaze_density: gaze_conditioned_density(&saliency[t], &noisy[t], cfg.denoise.lambda, kernel)?.into_heatmap(),
                flow: gt.scene.flows.get(t).cloned(),
                gaze: denoised[t],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AwarenessCase {
        noisy,
        denoised,
        batch: SequenceBatch::new(0, frames, fit)?,
        eval,
    })
}

/// A batch over a whole package. The gaze density of each frame is the
/// gaze-conditioned saliency at the configured reference noise level; awareness
/// maps are zeros unless given.
pub fn package_batch(cfg: &Config, pkg: &Package, awareness: Option<&[Heatmap]>) -> Result<SequenceBatch> {
    let (w, h) = pkg.dims();
    let n = pkg.frames.len();
    if let Some(maps) = awareness {
        if maps.len() != n {
            return Err(Error::LengthMismatch {
                what: "awareness maps",
                expected: n,
                got: maps.len(),
            });
        }
    }
    let saliency = frame_saliency(cfg, &pkg.frames)?;
    let kernel = cfg.noise.reference_sigma.max(cfg.denoise.min_bandwidth);
    let frames = (0..n)
        .map(|t| {
            let gaze_density = gaze_conditioned_density(&saliency[t], &pkg.gaze[t], cfg.denoise.lambda, kernel)?;
            Ok(BatchFrame {
                image: pkg.frames[t].clone(),
                awareness: awareness.map_or_else(|| Heatmap::zeros(w, h), |m| m[t].clone()),
                gaze_density: gaze_density.into_heatmap(),
                flow: (t + 1 < n).then(|| pkg.flows[t].clone()),
                gaze: pkg.gaze[t],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceBatch::new(0, frames, pkg.annotations.clone())
}

pub fn fg_mse(cfg: &Config, gt: &GroundTruth, case: &AwarenessCase) -> Result<f64> {
    let est = fg_estimate(&case.noisy, &gt.scene.flows, gt.scene.width(), gt.scene.height(), &cfg.estimator)?;
    eval_awareness(&est, &case.eval)
}

pub fn variational_estimate(cfg: &Config, case: &AwarenessCase, weights: &LossWeights) -> Result<AwarenessSequence> {
    Ok(variational_fit(&case.batch, weights, &cfg.estimator)?.sequence)
}

pub fn variational_mse(cfg: &Config, case: &AwarenessCase, weights: &LossWeights) -> Result<f64> {
    eval_awareness(&variational_estimate(cfg, case, weights)?, &case.eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwarenessRow {
    pub sigma_n: f64,
    pub mse_fg: f64,
    pub mse_var: f64,
}

pub const AWARENESS_HEADER: &str = "sigma_n,mse_fg,mse_var";

pub fn awareness_csv(rows: &[AwarenessRow]) -> String {
    let mut s = format!("{AWARENESS_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:.4},{:.4}\n", r.sigma_n, r.mse_fg, r.mse_var));
    }
    s
}

fn mean_by_row<T: Copy>(cells: &[(usize, usize)], results: &[Result<T>], rows: usize, f: impl Fn(&T) -> Vec<f64>) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); rows];
    let mut counts = vec![0usize; rows];
    for (k, r) in results.iter().enumerate() {
        let v = f(r.as_ref().map_err(|e| Error::Invalid(e.to_string()))?);
        let row = &mut out[cells[k].0];
        if row.is_empty() {
            row.resize(v.len(), 0.0);
        }
        for (a, b) in row.iter_mut().zip(v) {
            *a += b;
        }
        counts[cells[k].0] += 1;
    }
    for (row, n) in out.iter_mut().zip(counts) {
        row.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    Ok(out)
}

/// FG versus variational MSE on held-out annotations, averaged over scenes, per noise level.
pub fn awareness_bench(cfg: &Config, seed: u64, sigmas: &[f64], n_scenes: usize) -> Result<Vec<AwarenessRow>> {
    let scenes = awareness_scenes(cfg, seed, n_scenes)?;
    let cells: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|i| (0..n_scenes).map(move |s| (i, s))).collect();
    let results = par_map!(cells, |&(i, s): &(usize, usize)| -> Result<(f64, f64)> {
        let noise_seed = derive_seed(derive_seed(seed, STREAM_NOISE + i as u64), s as u64);
        let case = awareness_case(cfg, &scenes[s], sigmas[i], noise_seed)?;
        Ok((fg_mse(cfg, &scenes[s], &case)?, variational_mse(cfg, &case, &cfg.fit_weights)?))
    });
    let means = mean_by_row(&cells, &results, sigmas.len(), |&(a, b)| vec![a, b])?;
    Ok(sigmas
        .iter()
        .zip(means)
        .map(|(&sigma_n, m)| AwarenessRow {
            sigma_n,
            mse_fg: m[0],
            mse_var: m[1],
        })
        .collect())
}

/// Terms the variational estimator optimizes, in ablation order.
pub const FIT_TERMS: [Term; 6] = [Term::Aa, Term::Att, Term::SpatialA, Term::Temporal, Term::Decay, Term::Capacity];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    /// `None` for the full objective.
    pub removed: Option<Term>,
    pub mse: f64,
}

pub const ABLATION_HEADER: &str = "removed,mse";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let name = r.removed.map_or("none".to_string(), |t| t.to_string());
        s.push_str(&format!("{name},{:.4}\n", r.mse));
    }
    s
}

/// Variational MSE with the full fitting objective and with each term removed in turn.
pub fn ablate(cfg: &Config, seed: u64, sigma_n: f64, n_scenes: usize, terms: &[Term]) -> Result<Vec<AblationRow>> {
    let scenes = awareness_scenes(cfg, seed, n_scenes)?;
    let cases = par_range_map!(0..n_scenes, |s: usize| {
        awareness_case(cfg, &scenes[s], sigma_n, derive_seed(derive_seed(seed, STREAM_NOISE), s as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let variants: Vec<Option<Term>> = std::iter::once(None).chain(terms.iter().copied().map(Some)).collect();
    let cells: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..n_scenes).map(move |s| (v, s))).collect();
    let results = par_map!(cells, |&(v, s): &(usize, usize)| -> Result<f64> {
        let mut w = cfg.fit_weights;
        if let Some(t) = variants[v] {
            w.set_alpha(t, 0.0);
        }
        variational_mse(cfg, &cases[s], &w)
    });
    let means = mean_by_row(&cells, &results, variants.len(), |&m| vec![m])?;
    Ok(variants
        .into_iter()
        .zip(means)
        .map(|(removed, m)| AblationRow { removed, mse: m[0] })
        .collect())
}

// ---------------------------------------------------------------------------
// gradient suite

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradRow {
    pub term: Term,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub const GRADCHECK_HEADER: &str = "term,max_rel_error,checked,skipped";

pub fn gradcheck_csv(rows: &[GradRow]) -> String {
    let mut s = format!("{GRADCHECK_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:.3e},{},{}\n", r.term, r.max_rel_error, r.checked, r.skipped));
    }
    s
}

/// Worst relative error per term over `n_seeds` random 16×9×4 batches.
pub fn gradcheck_suite(weights: &LossWeights, seed: u64, n_seeds: usize) -> Result<Vec<GradRow>> {
    let cells: Vec<(usize, usize)> = (0..Term::ALL.len()).flat_map(|t| (0..n_seeds).map(move |s| (t, s))).collect();
    let results = par_map!(cells, |&(t, s): &(usize, usize)| {
        let base = derive_seed(seed, STREAM_GRAD + s as u64);
        let batch = gradcheck_batch(base);
        let mut other = random_batch(16, 9, 4, derive_seed(base, 1));
        other.start = 1;
        gradcheck(&batch, weights, Term::ALL[t], Some(&other), GRADCHECK_STEP)
    });
    let mut rows: Vec<GradRow> = Term::ALL
        .iter()
        .map(|&term| GradRow {
            term,
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        })
        .collect();
    for (k, r) in results.into_iter().enumerate() {
        let r = r?;
        let row = &mut rows[cells[k].0];
        row.max_rel_error = row.max_rel_error.max(r.max_rel_error);
        row.checked += r.checked;
        row.skipped += r.skipped;
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// saliency evaluation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScore {
    pub frame: usize,
    pub kl: f64,
    pub cc: f64,
    pub ig: f64,
}

pub const SALIENCY_HEADER: &str = "frame,kl,cc,ig";

pub fn saliency_csv(rows: &[SaliencyScore]) -> String {
    let mut s = format!("{SALIENCY_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:.4},{:.4},{:.4}\n", r.frame, r.kl, r.cc, r.ig));
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&SaliencyScore) -> f64| rows.iter().map(f).sum::<f64>() / n;
    s.push_str(&format!("mean,{:.4},{:.4},{:.4}\n", mean(|r| r.kl), mean(|r| r.cc), mean(|r| r.ig)));
    s
}

/// Scores each saliency map against the fixations of its frame. The reference
/// density for KL and CC is a splat of the fixations with width `fixation_sigma`;
/// IG is measured against the center prior. Frames without fixations are skipped.
pub fn eval_saliency(saliency: &[DensityMap], gaze: &[GazeFrame], fixation_sigma: f64) -> Result<Vec<SaliencyScore>> {
    if saliency.len() != gaze.len() {
        return Err(Error::LengthMismatch {
            what: "saliency maps",
            expected: gaze.len(),
            got: saliency.len(),
        });
    }
    let fixations = FixationSet::from_gaze(gaze);
    let mut out = Vec::new();
    for (t, (sal, g)) in saliency.iter().zip(gaze).enumerate() {
        if g.valid_count() == 0 {
            continue;
        }
        let (w, h) = sal.dims();
        let truth = gaussian_splat(g, fixation_sigma, w, h)?;
        let cc = match cross_correlation(&truth, sal) {
            Ok(v) => v,
            Err(Error::ZeroVariance) => 0.0,
            Err(e) => return Err(e),
        };
        out.push(SaliencyScore {
            frame: t,
            kl: kl_divergence(&truth, sal)?,
            cc,
            ig: information_gain(sal, &fixations.for_frame(g.frame_index), &center_prior(w, h))?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyFixations);
    }
    Ok(out)
}

/// Total awareness per frame as CSV.
pub fn mass_csv(seq: &AwarenessSequence) -> String {
    let mut s = String::from("frame,mass\n");
    for (t, m) in seq.masses().iter().enumerate() {
        s.push_str(&format!("{t},{m:.6}\n"));
    }
    s
}
