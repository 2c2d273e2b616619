//! `overparam-lab` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime or numeric
//! failures.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use overparam_core::bounds::{self, Regime};
use overparam_core::netcore::init_theorem;
use overparam_core::seeding::{mix, rng_from_seed};
use overparam_core::tensorlin::Matrix;
use overparam_core::trainer::{self, Algorithm, StepRule, TrainConfig};
use overparam_core::{spectra, Activation, Dataset};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::dataset::{gen_dataset, read_csv, write_csv, LabelMode};
use crate::error::{LabError, LabResult};
use crate::grid::{emit_grid, EmitOptions};
use crate::sweep::{self, run_sweep, LearningRate, SweepConfig};

#[derive(Debug, Parser)]
#[command(name = "overparam-lab", version, about = "Experiments on fitting random labels with overparameterized shallow networks")]
pub struct Cli {
    /// Base seed; every random draw in a command derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads for sweeps and Monte-Carlo estimates [default: all cores].
    #[arg(long, global = true, env = "OVERPARAM_LAB_WORKERS")]
    pub workers: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset on the unit sphere and write it as CSV.
    GenData(GenDataArgs),
    /// Train the hidden layer with GD or SGD and write the trace.
    Train(TrainArgs),
    /// Covariance minimum eigenvalues and their Hermite lower bounds.
    Spectra(SpectraArgs),
    /// Condition numbers, overparameterization margins and rate bounds.
    Bounds(BoundsArgs),
    /// Least-squares fit of the output layer on random features.
    FitOutput(FitOutputArgs),
    /// Success-probability grid over widths k and dimensions d.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Labels {
    Gaussian,
    Signs,
    File,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, value_enum, default_value_t = Labels::Gaussian)]
    pub labels: Labels,
    /// Label file (one value per line) for `--labels file`.
    #[arg(long)]
    pub labels_file: Option<PathBuf>,
    /// File name inside the output directory.
    #[arg(long, default_value = "data.csv")]
    pub name: String,
}

/// Where a command gets its dataset: a CSV file, or a fresh sample.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV: feature columns then the label, no header.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rescale rows of `--data` to unit norm.
    #[arg(long)]
    pub normalize: bool,
    /// Sample count when generating.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Input dimension when generating.
    #[arg(long, default_value_t = 10)]
    pub d: usize,
}

impl DataArgs {
    fn load(&self, seed: u64) -> LabResult<Dataset> {
        match &self.data {
            Some(path) => read_csv(path, self.normalize),
            None => gen_dataset(self.n, self.d, &LabelMode::Gaussian, mix(&[seed, 0])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleKind {
    Theorem,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Gd,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    #[arg(long, default_value_t = Activation::Softplus)]
    pub activation: Activation,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Gd)]
    pub algorithm: AlgorithmArg,
    #[arg(long, value_enum, default_value_t = RuleKind::Theorem)]
    pub rule: RuleKind,
    #[arg(long, default_value_t = 1.0)]
    pub eta_bar: f64,
    /// Step size for `--rule fixed`.
    #[arg(long)]
    pub eta: Option<f64>,
    /// SGD probability parameter (at least 3).
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    /// GD iterations, or single-sample SGD updates.
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: usize,
    /// Stop once ‖f(W)−y‖/‖y‖ is at or below this.
    #[arg(long, default_value_t = 1e-3)]
    pub target: f64,
    /// Record σ_min(J) (and ReLU sign flips) every this many recorded points.
    #[arg(long)]
    pub record_spectrum_every: Option<usize>,
    /// Skip the spectral-norm distance column.
    #[arg(long)]
    pub no_spec_dist: bool,
}

#[derive(Debug, Args)]
pub struct SpectraArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = Activation::Softplus)]
    pub activation: Activation,
    #[arg(long, default_value_t = spectra::DEFAULT_REPORT_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LambdaSource {
    /// μ_φ² σ_min²(X*X).
    Lower,
    /// Monte-Carlo estimate.
    Mc,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    #[arg(long, default_value_t = Activation::Softplus)]
    pub activation: Activation,
    #[arg(long, default_value_t = 1.0)]
    pub eta_bar: f64,
    /// The (1+δ) slack in the width requirements and misfit bound.
    #[arg(long, default_value_t = 1.0)]
    pub delta_confidence: f64,
    #[arg(long, value_enum, default_value_t = LambdaSource::Lower)]
    pub lambda: LambdaSource,
    #[arg(long, default_value_t = spectra::DEFAULT_REPORT_SAMPLES)]
    pub samples: usize,
    /// Numerical constant a margin must reach to count as in regime.
    #[arg(long, default_value_t = 1.0)]
    pub constant: f64,
}

#[derive(Debug, Args)]
pub struct FitOutputArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 600)]
    pub k: usize,
    #[arg(long, default_value_t = Activation::Relu)]
    pub activation: Activation,
    /// Monte-Carlo samples for λ̃(X) in the feature-Gram bound.
    #[arg(long, default_value_t = spectra::DEFAULT_REPORT_SAMPLES)]
    pub samples: usize,
}

/// `theorem`, or a positive constant step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateArg {
    Theorem,
    Fixed(f64),
}

fn parse_rate(s: &str) -> Result<RateArg, String> {
    if s.eq_ignore_ascii_case("theorem") {
        return Ok(RateArg::Theorem);
    }
    match s.parse::<f64>() {
        Ok(eta) if eta > 0.0 && eta.is_finite() => Ok(RateArg::Fixed(eta)),
        _ => Err(format!("expected `theorem` or a positive number, got {s:?}")),
    }
}

/// Grid axis values for `sweep`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridValues(pub Vec<usize>);

fn parse_grid_values(s: &str) -> Result<GridValues, String> {
    parse_grid(s).map(GridValues)
}

/// Parses `a..b` (inclusive, `a..=b` also accepted), `a,b,c`, or a single value.
pub fn parse_grid(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("{t:?} is not a nonnegative integer"))
    };
    let values: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if values.contains(&0) {
        return Err("grid values must be at least 1".into());
    }
    Ok(values)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = sweep::PAPER_N)]
    pub n: usize,
    /// Widths: `a..b` inclusive or a comma list.
    #[arg(long, value_parser = parse_grid_values, default_value = "1..25")]
    pub k: GridValues,
    /// Input dimensions: `a..b` inclusive or a comma list.
    #[arg(long, value_parser = parse_grid_values, default_value = "1..25")]
    pub d: GridValues,
    #[arg(long, default_value_t = sweep::PAPER_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = Activation::Softplus)]
    pub activation: Activation,
    /// `theorem` or a constant step [default: 0.15 softplus, 0.1 relu].
    #[arg(long, value_parser = parse_rate)]
    pub rate: Option<RateArg>,
    #[arg(long, default_value_t = sweep::PAPER_MAX_ITERS)]
    pub max_iters: usize,
    /// Relative residual below which a run counts as a success.
    #[arg(long, default_value_t = sweep::PAPER_THRESHOLD)]
    pub threshold: f64,
    /// Write per-trial traces under `traces/`.
    #[arg(long)]
    pub save_traces: bool,
    /// Skip the SVG heatmap.
    #[arg(long)]
    pub no_svg: bool,
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                LabError::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn workers(cli: &Cli) -> LabResult<usize> {
    match cli.workers {
        Some(0) => Err(LabError::Config("--workers must be at least 1".into())),
        Some(w) => Ok(w),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn dispatch(cli: &Cli) -> LabResult<()> {
    fs::create_dir_all(&cli.out).map_err(|e| LabError::io(&cli.out, e))?;
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Spectra(a) => with_pool(cli, || spectra_cmd(cli, a)),
        Command::Bounds(a) => with_pool(cli, || bounds_cmd(cli, a)),
        Command::FitOutput(a) => with_pool(cli, || fit_output(cli, a)),
        Command::Sweep(a) => sweep_cmd(cli, a),
    }
}

/// Monte-Carlo results do not depend on the pool size; it only sets speed.
fn with_pool(cli: &Cli, f: impl FnOnce() -> LabResult<()> + Send) -> LabResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers(cli)?)
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> LabResult<()> {
    let labels = match (a.labels, &a.labels_file) {
        (Labels::Gaussian, _) => LabelMode::Gaussian,
        (Labels::Signs, _) => LabelMode::Signs,
        (Labels::File, Some(p)) => LabelMode::File(p.clone()),
        (Labels::File, None) => {
            return Err(LabError::Config("--labels file needs --labels-file PATH".into()))
        }
    };
    let data = gen_dataset(a.n, a.d, &labels, cli.seed)?;
    let path = cli.out.join(&a.name);
    write_csv(&data, &path)?;
    println!("wrote {} (n={}, d={})", path.display(), data.n(), data.d());
    Ok(())
}

/// Writes `value` as `<stem>.json`, or as `<stem>.csv` with one
/// `key,value` row per scalar (nested keys joined with `.`).
fn write_report(cli: &Cli, stem: &str, value: &Value) -> LabResult<PathBuf> {
    let (path, text) = match cli.format {
        Format::Json => (
            cli.out.join(format!("{stem}.json")),
            serde_json::to_string_pretty(value)? + "\n",
        ),
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", value, &mut rows);
            let mut text = String::from("key,value\n");
            for (k, v) in rows {
                text.push_str(&format!("{k},{v}\n"));
            }
            (cli.out.join(format!("{stem}.csv")), text)
        }
    };
    fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) => a
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.replace(',', ";"))),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn to_value(v: &impl Serialize) -> LabResult<Value> {
    Ok(serde_json::to_value(v)?)
}

fn step_rule(a: &TrainArgs) -> LabResult<StepRule> {
    Ok(match (a.rule, a.algorithm) {
        (RuleKind::Fixed, _) => StepRule::Fixed {
            eta: a
                .eta
                .ok_or_else(|| LabError::Config("--rule fixed needs --eta".into()))?,
        },
        (RuleKind::Theorem, AlgorithmArg::Sgd) => StepRule::TheoremSgd {
            eta_bar: a.eta_bar,
            nu: a.nu,
        },
        (RuleKind::Theorem, AlgorithmArg::Gd) if a.activation == Activation::Relu => {
            StepRule::TheoremRelu { eta_bar: a.eta_bar }
        }
        (RuleKind::Theorem, AlgorithmArg::Gd) => StepRule::TheoremSmooth { eta_bar: a.eta_bar },
    })
}

fn train(cli: &Cli, a: &TrainArgs) -> LabResult<()> {
    let data = a.data.load(cli.seed)?;
    let mut net = init_theorem(a.k, data.d(), a.activation, &data, mix(&[cli.seed, 1]))?;
    let rule = step_rule(a)?;
    let config = TrainConfig {
        max_iters: a.max_iters,
        target_rel_residual: a.target,
        step_rule: rule,
        seed: mix(&[cli.seed, 2]),
        record_spectrum_every: a.record_spectrum_every,
        algorithm: match a.algorithm {
            AlgorithmArg::Gd => Algorithm::Gd,
            AlgorithmArg::Sgd => Algorithm::Sgd,
        },
        track_spectral_distance: !a.no_spec_dist,
    };
    config.validate().map_err(|e| LabError::Config(e.to_string()))?;
    let trace = trainer::train(&mut net, &data, &config)?;

    // Theory-side checks with λ replaced by its lower bound μ_φ²σ_min²(X*X).
    let mut checks = Value::Null;
    if let Ok(lam) = bounds::lambda_lower(data.x(), a.activation) {
        if lam > 0.0 {
            let rate = match (a.activation, rule) {
                (Activation::Relu, StepRule::TheoremRelu { eta_bar }) => {
                    bounds::predicted_rate(Regime::Relu, eta_bar, 1.0, data.x()).ok()
                }
                (act, StepRule::TheoremSmooth { eta_bar }) => act.derivative_bound().and_then(|b| {
                    let mu = spectra::mu(act).ok()?;
                    bounds::predicted_rate(Regime::Smooth { mu }, eta_bar, b, data.x()).ok()
                }),
                _ => None,
            };
            let traj = bounds::check_trajectory(&trace, &data, lam, rate)?;
            let radius = bounds::radius_and_path(&trace, &data, lam)?;
            checks = json!({
                "lambda_lower": lam,
                "predicted_rate": rate,
                "trajectory": to_value(&traj)?,
                "radius": to_value(&radius)?,
            });
        }
    }
    println!(
        "{} iterations, converged={}, final relative residual {:.3e}",
        trace.iterations_run,
        trace.converged,
        trace.final_rel_residual().unwrap_or(f64::NAN)
    );
    let summary = json!({
        "n": data.n(),
        "d": data.d(),
        "k": a.k,
        "activation": a.activation,
        "config": to_value(&config)?,
        "step_size": trace.step_size_used,
        "iterations_run": trace.iterations_run,
        "converged": trace.converged,
        "final_rel_residual": trace.final_rel_residual(),
        "checks": checks,
    });
    match cli.format {
        Format::Json => {
            let mut full = summary;
            full["trace"] = to_value(&trace)?;
            write_report(cli, "train", &full)?;
        }
        Format::Csv => {
            let path = cli.out.join("trace.csv");
            fs::write(&path, trace.to_csv()).map_err(|e| LabError::io(&path, e))?;
            println!("wrote {}", path.display());
            write_report(cli, "train", &summary)?;
        }
    }
    Ok(())
}

fn spectra_cmd(cli: &Cli, a: &SpectraArgs) -> LabResult<()> {
    let data = a.data.load(cli.seed)?;
    let report = spectra::spectral_report(data.x(), a.activation, a.samples, cli.seed)?;
    println!(
        "lambda(X) = {:.6e} ± {:.1e}, quadratic bound {:.6e}",
        report.lambda_mc, report.lambda_mc_std_err, report.lambda_quadratic_bound
    );
    write_report(cli, "spectra", &to_value(&report)?)?;
    Ok(())
}

fn bounds_cmd(cli: &Cli, a: &BoundsArgs) -> LabResult<()> {
    let data = a.data.load(cli.seed)?;
    let net0 = init_theorem(a.k, data.d(), a.activation, &data, mix(&[cli.seed, 1]))?;
    let lam = match a.lambda {
        LambdaSource::Lower => bounds::lambda_lower(data.x(), a.activation)?,
        LambdaSource::Mc => spectra::lambda_estimate(data.x(), a.activation, a.samples, cli.seed)?.value,
    };
    let report = bounds::bound_report(&data, &net0, lam, a.eta_bar, a.delta_confidence)?;
    let nominal = json!({
        "constant": a.constant,
        "smooth": report.overparam_ratio_smooth >= a.constant,
        "relu": report.overparam_ratio_relu >= a.constant,
        "relu_kappa": report.overparam_ratio_relu_kappa >= a.constant,
    });
    println!(
        "kappa = {:.4e}, smooth margin {:.3e}, relu margin {:.3e}",
        report.kappa, report.overparam_ratio_smooth, report.overparam_ratio_relu
    );
    let mut v = to_value(&report)?;
    v["nominal_regime"] = nominal;
    write_report(cli, "bounds", &v)?;
    Ok(())
}

fn fit_output(cli: &Cli, a: &FitOutputArgs) -> LabResult<()> {
    let data = a.data.load(cli.seed)?;
    if a.k == 0 {
        return Err(LabError::Config("k must be at least 1".into()));
    }
    let mut rng = rng_from_seed(mix(&[cli.seed, 1]));
    let w: Vec<f64> = (0..a.k * data.d()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let w0 = Matrix::from_vec(a.k, data.d(), w)?;
    let fit = trainer::fit_output_layer(data.x(), &w0, a.activation, data.y())?;
    let mut v = json!({
        "n": data.n(),
        "d": data.d(),
        "k": a.k,
        "activation": a.activation,
        "residual_norm": fit.residual_norm,
        "min_eig_gram": fit.min_eig_gram,
        "v": fit.v,
    });
    if let (Some(b), true) = (a.activation.derivative_bound(), data.n() >= 2) {
        let lt = spectra::lambda_tilde_estimate(data.x(), a.activation, a.samples, cli.seed)?;
        let bound = bounds::phi_gram_eig_bound(a.k, lt.value, b, data.n())?;
        v["lambda_tilde_mc"] = json!(lt.value);
        v["lambda_tilde_std_err"] = json!(lt.std_err);
        v["phi_gram_eig_bound"] = json!(bound);
        v["bound_met_with_half_slack"] = json!(fit.min_eig_gram >= 0.5 * bound);
    }
    println!(
        "residual {:.3e}, min eig of feature Gram {:.3e}",
        fit.residual_norm, fit.min_eig_gram
    );
    write_report(cli, "fit_output", &v)?;
    Ok(())
}

fn sweep_cmd(cli: &Cli, a: &SweepArgs) -> LabResult<()> {
    let learning_rate = match a.rate {
        None => LearningRate::paper_default(a.activation),
        Some(RateArg::Theorem) => LearningRate::Theorem,
        Some(RateArg::Fixed(eta)) => LearningRate::PaperFixed { eta },
    };
    let config = SweepConfig {
        n: a.n,
        d_values: a.d.0.clone(),
        k_values: a.k.0.clone(),
        trials: a.trials,
        activation: a.activation,
        learning_rate,
        max_iters: a.max_iters,
        success_threshold: a.threshold,
        base_seed: cli.seed,
        workers: workers(cli)?,
    };
    let result = run_sweep(&config, a.save_traces)?;
    let files = emit_grid(
        &result,
        &cli.out,
        EmitOptions {
            svg: !a.no_svg,
            traces: a.save_traces,
        },
    )?;
    let n = config.n;
    let over = result.mean_success_where(|k, d| k * d >= 2 * n);
    let under = result.mean_success_where(|k, d| 2 * k * d <= n);
    println!(
        "{} cells in {:.1}s; mean success kd>=2n: {}, kd<=n/2: {}",
        result.cells.len(),
        result.wall_time,
        fmt_opt(over),
        fmt_opt(under)
    );
    if cli.format == Format::Json {
        println!("{}", serde_json::to_string(&json!({ "files": files }))?);
    } else {
        for f in files {
            println!("{}", f.display());
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}
