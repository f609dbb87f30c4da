use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use gaze_aware::awareness::{fg_estimate, recursive_run, variational_fit, AwarenessSequence};
use gaze_aware::bench::{self, FIT_TERMS};
use gaze_aware::config::Config;
use gaze_aware::io::{self, RunReport};
use gaze_aware::objective::total_loss;
use gaze_aware::synth::{self, ScanpathSpec, SceneSpec, DEFAULT_ANNOTATIONS};
use gaze_aware::{Error, Result, Term};

/// Attended-awareness estimation from noisy gaze, saliency and optic flow.
#[derive(Parser)]
#[command(name = "gaze-aware", version)]
struct Cli {
    /// JSON configuration; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene package.
    Synth(SynthArgs),
    /// Filtered-gaze baseline on a package.
    Fg(InputArgs),
    /// Awareness estimate on a package.
    Estimate(EstimateArgs),
    /// Meanshift denoising MAE against raw gaze, per noise level.
    DenoiseBench(DenoiseArgs),
    /// Calibration error before and after fitting the correction net.
    RecalibrateBench(RecalibrateArgs),
    /// FG versus variational awareness MSE, per noise level.
    AwarenessBench(AwarenessArgs),
    /// Variational MSE with each loss term left out in turn.
    Ablate(AblateArgs),
    /// Score a package's awareness maps with every loss term.
    Objective(ObjectiveArgs),
    /// Analytic versus finite-difference gradients of every term.
    Gradcheck(GradcheckArgs),
    /// KL, CC and IG of saliency against the package's gaze.
    EvalSaliency(EvalSaliencyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description; a random scene is drawn from the seed when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = gaze_aware::grid::DEFAULT_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = gaze_aware::grid::DEFAULT_HEIGHT)]
    height: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    objects: usize,
    #[arg(long, default_value_t = DEFAULT_ANNOTATIONS)]
    annotations: usize,
}

#[derive(Args)]
struct InputArgs {
    /// Scene package directory.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Recursive,
    Variational,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Recursive)]
    method: Method,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long, value_delimiter = ',', default_values_t = bench::DENOISE_SIGMAS)]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = bench::DENOISE_SCENES)]
    scenes: usize,
}

#[derive(Args)]
struct RecalibrateArgs {
    #[arg(long, value_delimiter = ',', default_values_t = bench::RECALIBRATION_SIGMAS)]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = bench::RECALIBRATION_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = bench::RECALIBRATION_SCENES_PER_RUN)]
    scenes_per_run: usize,
    /// Fit against saliency instead of the true gaze.
    #[arg(long)]
    self_supervised: bool,
}

#[derive(Args)]
struct AwarenessArgs {
    #[arg(long, value_delimiter = ',', default_values_t = bench::AWARENESS_SIGMAS)]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = bench::AWARENESS_SCENES)]
    scenes: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value_t = bench::ABLATION_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = bench::AWARENESS_SCENES)]
    scenes: usize,
    /// Terms to leave out, by name (aa, att, s_a, t, dec, cap).
    #[arg(long, value_delimiter = ',')]
    terms: Vec<String>,
}

#[derive(Args)]
struct ObjectiveArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory holding the awareness maps to score; defaults to the package.
    #[arg(long)]
    maps: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = bench::GRADCHECK_SEEDS)]
    seeds: usize,
}

#[derive(Args)]
struct EvalSaliencyArgs {
    #[arg(long)]
    input: PathBuf,
    /// Width of the fixation splat used as ground-truth density (normalized).
    #[arg(long, default_value_t = 0.0347)]
    fixation_sigma: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("GAZE_AWARE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("GAZE_AWARE_THREADS must be a nonnegative integer, got `{value}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let start = Instant::now();
    let out = cli.out.as_deref();
    let (name, outputs) = match cli.command {
        Command::Synth(a) => ("synth", synth_cmd(&cfg, &a, require_out(out)?)?),
        Command::Fg(a) => ("fg", fg_cmd(&cfg, &a, require_out(out)?)?),
        Command::Estimate(a) => ("estimate", estimate_cmd(&cfg, &a, require_out(out)?)?),
        Command::DenoiseBench(a) => {
            check_sigmas(&a.sigmas)?;
            let rows = bench::denoise_bench(&cfg, cfg.seed, &a.sigmas, a.scenes)?;
            ("denoise-bench", emit(out, "denoise.csv", &gaze_aware::refine::denoise_csv(&rows))?)
        }
        Command::RecalibrateBench(a) => {
            check_sigmas(&a.sigmas)?;
            let rows = bench::recalibrate_bench(&cfg, cfg.seed, &a.sigmas, a.runs, a.scenes_per_run, !a.self_supervised)?;
            ("recalibrate-bench", emit(out, "recalibration.csv", &bench::recalibration_csv(&rows))?)
        }
        Command::AwarenessBench(a) => {
            check_sigmas(&a.sigmas)?;
            let rows = bench::awareness_bench(&cfg, cfg.seed, &a.sigmas, a.scenes)?;
            ("awareness-bench", emit(out, "awareness.csv", &bench::awareness_csv(&rows))?)
        }
        Command::Ablate(a) => {
            let terms = if a.terms.is_empty() {
                FIT_TERMS.to_vec()
            } else {
                a.terms.iter().map(|t| t.parse()).collect::<Result<Vec<Term>>>()?
            };
            let rows = bench::ablate(&cfg, cfg.seed, a.sigma, a.scenes, &terms)?;
            ("ablate", emit(out, "ablation.csv", &bench::ablation_csv(&rows))?)
        }
        Command::Objective(a) => {
            let pkg = synth::read_package(&a.input)?;
            let maps = match &a.maps {
                Some(dir) => io::read_pgm_sequence(dir, "awareness")?,
                None => pkg.awareness.clone(),
            };
            if maps.is_empty() {
                return Err(Error::Invalid("no awareness_*.pgm maps to score".into()));
            }
            let batch = bench::package_batch(&cfg, &pkg, Some(&maps))?;
            let report = total_loss(&batch, &cfg.weights, None);
            ("objective", emit(out, "objective.csv", &report.to_csv())?)
        }
        Command::Gradcheck(a) => {
            let rows = bench::gradcheck_suite(&cfg.weights, cfg.seed, a.seeds)?;
            ("gradcheck", emit(out, "gradcheck.csv", &bench::gradcheck_csv(&rows))?)
        }
        Command::EvalSaliency(a) => {
            let pkg = synth::read_package(&a.input)?;
            let saliency = bench::frame_saliency(&cfg, &pkg.frames)?;
            let scores = bench::eval_saliency(&saliency, &pkg.gaze, a.fixation_sigma)?;
            ("eval-saliency", emit(out, "saliency.csv", &bench::saliency_csv(&scores))?)
        }
    };
    let report = RunReport {
        command: name.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    // the report goes to stderr so output directories stay reproducible
    eprintln!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::Invalid("this command needs --out <dir>".into()))
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() || sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Invalid("noise levels must be finite and ≥ 0".into()));
    }
    Ok(())
}

/// Prints a CSV table and, with `--out`, also writes it there.
fn emit(out: Option<&Path>, file: &str, csv: &str) -> Result<Vec<String>> {
    print!("{csv}");
    match out {
        Some(dir) => {
            let path = dir.join(file);
            io::write_text(&path, csv)?;
            Ok(vec![path.display().to_string()])
        }
        None => Ok(vec![]),
    }
}

fn synth_cmd(cfg: &Config, a: &SynthArgs, out: &Path) -> Result<Vec<String>> {
    let spec = match &a.scene {
        Some(path) => synth::read_scene_spec(path)?,
        None => SceneSpec::random(a.width, a.height, a.frames, a.objects, cfg.seed)?,
    };
    let gt = synth::gen_ground_truth(&spec, &ScanpathSpec::default(), a.annotations, &cfg.estimator, &cfg.weights)?;
    synth::write_package(out, &gt)?;
    Ok(vec![out.display().to_string()])
}

fn write_sequence(out: &Path, seq: &AwarenessSequence) -> Result<Vec<String>> {
    io::write_pgm_sequence(out, "awareness", seq.frames())?;
    let mass = out.join("mass.csv");
    io::write_text(&mass, &bench::mass_csv(seq))?;
    Ok(vec![out.display().to_string()])
}

fn fg_cmd(cfg: &Config, a: &InputArgs, out: &Path) -> Result<Vec<String>> {
    let pkg = synth::read_package(&a.input)?;
    let (w, h) = pkg.dims();
    let seq = fg_estimate(&pkg.gaze, &pkg.flows, w, h, &cfg.estimator)?;
    write_sequence(out, &seq)
}

fn estimate_cmd(cfg: &Config, a: &EstimateArgs, out: &Path) -> Result<Vec<String>> {
    let pkg = synth::read_package(&a.input)?;
    let (w, h) = pkg.dims();
    match a.method {
        Method::Recursive => {
            let flows = &pkg.flows[..pkg.frames.len() - 1];
            let seq = recursive_run(&pkg.gaze, flows, w, h, &cfg.estimator, &cfg.weights)?;
            write_sequence(out, &seq)
        }
        Method::Variational => {
            let batch = bench::package_batch(cfg, &pkg, None)?;
            let fit = variational_fit(&batch, &cfg.fit_weights, &cfg.estimator)?;
            let mut outputs = write_sequence(out, &fit.sequence)?;
            let summary = format!(
                "initial_loss,loss,iterations\n{:.9e},{:.9e},{}\n",
                fit.initial_loss, fit.loss, fit.iterations
            );
            outputs.extend(emit(Some(out), "fit.csv", &summary)?);
            Ok(outputs)
        }
    }
}
