//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to the
//! process stderr (bypassing libtest capture) and then asserts the same outcome.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use gaze_aware::awareness::{recursive_run, EstimatorConfig};
use gaze_aware::bench::{
    ablate, awareness_bench, awareness_csv, denoise_bench, gradcheck_csv, gradcheck_suite, recalibrate_bench,
    recalibration_csv, AWARENESS_SCENES, AWARENESS_SIGMAS, ABLATION_SIGMA, DENOISE_SCENES, DENOISE_SIGMAS,
    GRADCHECK_SEEDS, RECALIBRATION_RUNS, RECALIBRATION_SCENES_PER_RUN, RECALIBRATION_SIGMAS,
};
use gaze_aware::config::Config;
use gaze_aware::grid::{gaussian_splat, normalize, softmax, DensityMap};
use gaze_aware::refine::{denoise_csv, meanshift, MeanShiftConfig};
use gaze_aware::{FlowField, GazeFrame, Heatmap, LossWeights, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// timed criteria must not share the CPU with each other
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n:>2} {verdict}: {name}: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn c01_gradients_match_finite_differences() {
    let _g = serial();
    let t0 = Instant::now();
    let rows = gradcheck_suite(&LossWeights::default(), 0, GRADCHECK_SEEDS).unwrap();
    let elapsed = t0.elapsed();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let every_term = rows.len() == Term::ALL.len() && rows.iter().all(|r| r.checked > 0);
    let pass = worst < 1e-4 && every_term && elapsed < Duration::from_secs(60);
    report(
        1,
        "gradient check",
        pass,
        &format!("{} terms, {GRADCHECK_SEEDS} seeds, worst rel err {worst:.2e} (< 1e-4), {:.1}s (< 60s)", rows.len(), secs(elapsed)),
    );
    assert!(pass, "{}", gradcheck_csv(&rows));
}

#[test]
fn c02_densities_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut negative = 0;
    for i in 0..1000 {
        let (w, h) = (rng.gen_range(2..48), rng.gen_range(2..40));
        let d: DensityMap = match i % 3 {
            0 => {
                // wide dynamic range with some exact zeros
                let m = Heatmap::from_fn(w, h, |_, _| if rng.gen_bool(0.2) { 0.0 } else { 10f64.powf(rng.gen_range(-8.0..3.0)) });
                match normalize(&m) {
                    Ok(d) => d,
                    Err(_) => normalize(&Heatmap::filled(w, h, 1.0)).unwrap(),
                }
            }
            1 => softmax(&Heatmap::from_fn(w, h, |_, _| rng.gen_range(-50.0..50.0))),
            _ => {
                let g = GazeFrame::new(
                    0,
                    [[rng.gen(), rng.gen()], [rng.gen(), rng.gen()], [rng.gen(), rng.gen()]],
                    [true, rng.gen(), rng.gen()],
                )
                .unwrap();
                gaussian_splat(&g, rng.gen_range(0.005..0.3), w, h).unwrap()
            }
        };
        let data = d.as_heatmap().data();
        negative += data.iter().filter(|v| !(**v >= 0.0)).count();
        let total: f64 = data.iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    let pass = worst <= 1e-6 && negative == 0;
    report(2, "density normalization", pass, &format!("1000 maps, max |sum-1| {worst:.1e} (<= 1e-6), {negative} negative cells"));
    assert!(pass);
}

#[test]
fn c03_unattended_awareness_decays_at_eps_dec() {
    let (w, h) = (64, 48);
    let mut gaze = vec![GazeFrame::single(0, 0.5, 0.5)];
    gaze.extend((1..12).map(GazeFrame::blink));
    let flows = vec![FlowField::zeros(w, h); gaze.len() - 1];
    let weights = LossWeights::default();
    let seq = recursive_run(&gaze, &flows, w, h, &EstimatorConfig::default(), &weights).unwrap();
    let masses: Vec<f64> = seq.frames().iter().map(|f| f.data().iter().sum()).collect();
    let expected = 1.0 - weights.eps_dec;
    let worst = masses.windows(2).map(|m| (m[1] / m[0] - expected).abs()).fold(0.0, f64::max);
    let pass = masses[0] > 0.0 && worst <= 1e-6;
    report(3, "decay without gaze", pass, &format!("mass ratio {expected} over {} steps, max deviation {worst:.1e} (<= 1e-6)", masses.len() - 1));
    assert!(pass, "{masses:?}");
}

#[test]
fn c04_denoising_beats_raw_gaze() {
    let _g = serial();
    let cfg = Config::default();
    let t0 = Instant::now();
    let rows = denoise_bench(&cfg, 0, &DENOISE_SIGMAS, DENOISE_SCENES).unwrap();
    let elapsed = t0.elapsed();
    let at = |s: f64| rows.iter().find(|r| (r.sigma_n - s).abs() < 1e-12).unwrap();
    let sal_ok = [0.1, 0.15, 0.2].iter().all(|&s| at(s).sal_mae < at(s).raw_mae);
    let cond_ok = [0.15, 0.2].iter().all(|&s| at(s).cond_mae <= at(s).sal_mae);
    let pass = sal_ok && cond_ok && elapsed < Duration::from_secs(120);
    let detail = [0.1, 0.15, 0.2]
        .iter()
        .map(|&s| format!("σ={s}: raw {:.1} sal {:.1} cond {:.1}", at(s).raw_mae, at(s).sal_mae, at(s).cond_mae))
        .collect::<Vec<_>>()
        .join("; ");
    report(4, "denoising MAE (px)", pass, &format!("{detail}; {:.1}s (< 120s)", secs(elapsed)));
    assert!(pass, "{}", denoise_csv(&rows));
}

#[test]
fn c05_recalibration_halves_error() {
    let _g = serial();
    let cfg = Config::default();
    let t0 = Instant::now();
    let rows = recalibrate_bench(&cfg, 0, &RECALIBRATION_SIGMAS, RECALIBRATION_RUNS, RECALIBRATION_SCENES_PER_RUN, true).unwrap();
    let elapsed = t0.elapsed();
    let checked: Vec<_> = rows.iter().filter(|r| r.sigma_n >= 0.2 - 1e-12).collect();
    let ratios_ok = checked.len() == 2 && checked.iter().all(|r| r.before >= 2.0 * r.after);
    let pass = ratios_ok && elapsed < Duration::from_secs(300);
    let detail = checked
        .iter()
        .map(|r| format!("σ={}: {:.4} -> {:.4} ({:.1}x)", r.sigma_n, r.before, r.after, r.before / r.after))
        .collect::<Vec<_>>()
        .join("; ");
    report(5, "recalibration", pass, &format!("{detail} (>= 2x); {:.1}s (< 300s)", secs(elapsed)));
    assert!(pass, "{}", recalibration_csv(&rows));
}

/// Relative spread `(max − min) / min` of a set of positive errors.
fn relative_spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / min
}

#[test]
fn c06_variational_beats_fg_and_is_flat() {
    let _g = serial();
    let cfg = Config::default();
    let rows = awareness_bench(&cfg, 0, &AWARENESS_SIGMAS, AWARENESS_SCENES).unwrap();
    let beats = rows.iter().all(|r| r.mse_var <= r.mse_fg);
    let spread = relative_spread(&rows.iter().map(|r| r.mse_var).collect::<Vec<_>>());
    let pass = beats && spread < 0.25;
    let detail = rows
        .iter()
        .map(|r| format!("σ={}: fg {:.4} var {:.4}", r.sigma_n, r.mse_fg, r.mse_var))
        .collect::<Vec<_>>()
        .join("; ");
    report(6, "awareness MSE", pass, &format!("{detail}; var spread {spread:.3} (< 0.25)"));
    assert!(pass, "{}", awareness_csv(&rows));
}

#[test]
fn c07_attention_terms_are_needed() {
    let _g = serial();
    let cfg = Config::default();
    let rows = ablate(&cfg, 0, ABLATION_SIGMA, AWARENESS_SCENES, &[Term::Aa, Term::Att]).unwrap();
    let full = rows.iter().find(|r| r.removed.is_none()).unwrap().mse;
    let worse = rows.iter().filter(|r| r.removed.is_some()).all(|r| r.mse > full);
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.removed.map_or("full".to_string(), |t| format!("-{t}")), r.mse))
        .collect::<Vec<_>>()
        .join(", ");
    report(7, "ablation", worse, &format!("σ={ABLATION_SIGMA}: {detail} (removal must raise MSE)"));
    assert!(worse);
}

#[test]
fn c08_translation_equivariance() {
    let (w, h, n) = (72usize, 56usize, 8usize);
    let (dx, dy) = (2i64, 1i64);
    let cfg = EstimatorConfig::default();
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // pixel positions of the reference scanpath, kept well inside the frame
    let path: Vec<Option<(f64, f64)>> = (0..n)
        .map(|_| (!rng.gen_bool(0.2)).then(|| (rng.gen_range(18.0..34.0), rng.gen_range(16.0..28.0))))
        .collect();
    let frame = |t: usize, shift: bool| match path[t] {
        None => GazeFrame::blink(t),
        Some((x, y)) => {
            let k = if shift { t as f64 } else { 0.0 };
            GazeFrame::single(t, (x + k * dx as f64) / (w - 1) as f64, (y + k * dy as f64) / (h - 1) as f64)
        }
    };
    let still: Vec<GazeFrame> = (0..n).map(|t| frame(t, false)).collect();
    let moving: Vec<GazeFrame> = (0..n).map(|t| frame(t, true)).collect();
    let reference = recursive_run(&still, &vec![FlowField::zeros(w, h); n - 1], w, h, &cfg, &weights).unwrap();
    let shifted = recursive_run(&moving, &vec![FlowField::constant(w, h, dx as f64, dy as f64); n - 1], w, h, &cfg, &weights).unwrap();
    let margin = 6i64;
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for t in 0..n {
        let (ox, oy) = (t as i64 * dx, t as i64 * dy);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sx, sy) = (x + ox, y + oy);
                let inside = |a: i64, b: i64| a >= margin && b >= margin && a < w as i64 - margin && b < h as i64 - margin;
                if !inside(x, y) || !inside(sx, sy) {
                    continue;
                }
                let a = reference.frames()[t].get(x as usize, y as usize);
                let b = shifted.frames()[t].get(sx as usize, sy as usize);
                worst = worst.max((a - b).abs());
                compared += 1;
            }
        }
    }
    let pass = worst < 1e-3 && compared > 0 && reference.frames()[n - 1].max() > 0.0;
    report(8, "translation equivariance", pass, &format!("flow ({dx},{dy}) px/frame, {compared} interior cells, max |diff| {worst:.1e} (< 1e-3)"));
    assert!(pass);
}

#[test]
fn c09_meanshift_reaches_the_mode() {
    let (w, h) = (160usize, 90usize);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = rng.gen_range(3.0..10.0);
        // at least 4σ from every edge, so truncation does not move the mode
        let c = [rng.gen_range(4.0 * s..(w - 1) as f64 - 4.0 * s), rng.gen_range(4.0 * s..(h - 1) as f64 - 4.0 * s)];
        let raw = Heatmap::from_fn(w, h, |x, y| {
            let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
            (-0.5 * d2 / (s * s)).exp()
        });
        let density = normalize(&raw).unwrap();
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for y in 0..h {
            for x in 0..w {
                let v = density.as_heatmap().get(x, y);
                if v > best.2 {
                    best = (x, y, v);
                }
            }
        }
        let start = [c[0] + rng.gen_range(-1.5 * s..1.5 * s), c[1] + rng.gen_range(-1.5 * s..1.5 * s)];
        let ms = MeanShiftConfig {
            bandwidth_px: s,
            max_iterations: 500,
            epsilon_px: 1e-3,
        };
        let mode = meanshift(start, density.as_heatmap(), &ms).unwrap();
        let d = ((mode[0] - best.0 as f64).powi(2) + (mode[1] - best.1 as f64).powi(2)).sqrt();
        worst = worst.max(d);
    }
    let pass = worst <= 1.0;
    report(9, "meanshift mode", pass, &format!("50 Gaussians, max distance to grid argmax {worst:.3} px (<= 1)"));
    assert!(pass);
}

fn determinism_outputs() -> String {
    let cfg = Config::default();
    let mut out = denoise_csv(&denoise_bench(&cfg, 3, &DENOISE_SIGMAS, 3).unwrap());
    out += &recalibration_csv(&recalibrate_bench(&cfg, 3, &RECALIBRATION_SIGMAS, 2, RECALIBRATION_SCENES_PER_RUN, true).unwrap());
    out += &gradcheck_csv(&gradcheck_suite(&LossWeights::default(), 3, 1).unwrap());
    out
}

/// The same outputs computed on a one-thread pool; `None` without the parallel feature.
#[cfg(feature = "parallel")]
fn single_thread_outputs() -> Option<String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    Some(pool.install(determinism_outputs))
}

#[cfg(not(feature = "parallel"))]
fn single_thread_outputs() -> Option<String> {
    None
}

#[test]
fn c10_reruns_are_byte_identical() {
    let _g = serial();
    let first = determinism_outputs();
    let second = determinism_outputs();
    let single = single_thread_outputs();
    let pass = first == second && single.as_ref().map_or(true, |s| *s == first);
    let threads = match &single {
        Some(s) => format!(", single-thread identical: {}", *s == first),
        None => String::new(),
    };
    report(
        10,
        "determinism",
        pass,
        &format!("denoise + recalibration + gradcheck CSV, {} bytes, rerun identical: {}{threads}", first.len(), first == second),
    );
    assert!(pass);
}
