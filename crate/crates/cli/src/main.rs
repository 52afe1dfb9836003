//! `famgp` command-line tool: synthetic data, fitting, prediction and benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use famgp::data::{gen_correlated, gen_sinusoids, FrequencyMode, SinusoidConfig};
use famgp::experiments::{self, BenchKind, ExperimentConfig};
use famgp::io::{read_table_file, write_table_file, Model, NumericTable, Table};
use famgp::train::{default_init, mo_train, train};
use famgp::{
    CoregionalizationMatrix, Hyper, KernelKind, KernelParams, MONoise, ModelSpec, OptimizerConfig, TrainPath,
    TrainingTrace,
};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "famgp", version, about = "Fast approximate multi-output Gaussian processes")]
struct Cli {
    /// Seed for data generation and benchmarks
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for default output paths
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON object whose keys override the subcommand's flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV and its noise-free counterpart
    GenData {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train hyperparameters on a dataset CSV and write the model
    Fit(FitArgs),
    /// Predict from a saved model
    Predict(PredictArgs),
    /// Run a benchmark suite and write its report
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GenKind {
    /// Sum of sinusoids with uniform random coefficients
    Sinusoids(SinusoidArgs),
    /// Two outputs drawn from a coregionalized SE prior
    Correlated(CorrelatedArgs),
}

#[derive(Args, Serialize, Deserialize)]
struct SinusoidArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    x_min: f64,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    x_max: f64,
    #[arg(long, default_value_t = 10)]
    num_terms: usize,
    #[arg(long, default_value_t = 1.0)]
    coeff_min: f64,
    #[arg(long, default_value_t = 10.0)]
    coeff_max: f64,
    /// Noise standard deviation (default: √5)
    #[arg(long, default_value_t = 5f64.sqrt())]
    noise_sd: f64,
    /// Space the frequencies evenly over the coefficient range
    #[arg(long)]
    even_frequencies: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct CorrelatedArgs {
    #[arg(long, default_value_t = 900)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    l_se: f64,
    #[arg(long, default_value_t = -0.95, allow_hyphen_values = true)]
    off_diagonal: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_var: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct FitArgs {
    /// Dataset CSV with header x,y1,...,yM
    #[arg(long)]
    data: Option<PathBuf>,
    /// squared-exponential, periodic or chebyshev
    #[arg(long, default_value = "squared-exponential")]
    kernel: KernelKind,
    /// Truncation order
    #[arg(long, default_value_t = 75)]
    n: usize,
    /// SE length scale l_se, in input units
    #[arg(long)]
    length_scale: Option<f64>,
    /// SE input-density width alpha_se
    #[arg(long)]
    alpha: Option<f64>,
    /// Periodic base frequency f_pr, in radians per input unit
    #[arg(long)]
    frequency: Option<f64>,
    /// Periodic width w_pr
    #[arg(long)]
    width: Option<f64>,
    /// Chebyshev decay a in (0, 1]
    #[arg(long)]
    a: Option<f64>,
    /// Chebyshev decay b in (0, 1)
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    signal_variance: f64,
    /// Initial (or fixed) noise variance; default var(y)/10
    #[arg(long)]
    noise_variance: Option<f64>,
    /// Parameters to train from l_se, f_pr, w_pr, a, b, signal_variance, noise_variance
    /// (default: the kernel's, signal and noise)
    #[arg(long, value_delimiter = ',')]
    train: Option<Vec<Hyper>>,
    /// Multi-output only: also learn per-output noise variances
    #[arg(long)]
    learn_noise: bool,
    /// auto, fast or general
    #[arg(long, default_value = "auto")]
    path: String,
    #[arg(long, default_value_t = OptimizerConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = OptimizerConfig::default().initial_step)]
    initial_step: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().grad_tol)]
    grad_tol: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().step_shrink)]
    step_shrink: f64,
    #[arg(long, default_value_t = OptimizerConfig::default().step_grow)]
    step_grow: f64,
    /// Model JSON path (default: <out-dir>/model.json)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training-trace CSV path (default: <out-dir>/trace.csv)
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV whose `x` column gives the prediction inputs
    #[arg(long)]
    data: Option<PathBuf>,
    /// Even grid `lo,hi,count`
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Derivative orders, e.g. `0,3`
    #[arg(long, value_delimiter = ',', default_value = "0")]
    derivative: Vec<usize>,
    /// Add marginal variance columns
    #[arg(long)]
    variance: bool,
    /// Predictions CSV path (default: <out-dir>/predictions.csv)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// scaling, rmse-samples, rmse-eigs or correlation
    kind: BenchKind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

/// Overlays the keys of `config` onto the serialized flags.
fn merged<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Value>) -> Result<T> {
    let Some(cfg) = config else { return Ok(flags) };
    let mut base = serde_json::to_value(&flags)?;
    merge(&mut base, cfg);
    serde_json::from_value(base).context("config does not match the subcommand's options")
}

fn merge(a: &mut Value, b: &Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b.clone(),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn gen_data(kind: GenKind, seed: u64, out_dir: &Path, config: Option<&Value>) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    match kind {
        GenKind::Sinusoids(args) => {
            let a = merged(args, config)?;
            let cfg = SinusoidConfig {
                n: a.n,
                x_range: (a.x_min, a.x_max),
                num_terms: a.num_terms,
                coeff_range: (a.coeff_min, a.coeff_max),
                noise_sd: a.noise_sd,
                frequencies: if a.even_frequencies { FrequencyMode::Even } else { FrequencyMode::Random },
            };
            let d = gen_sinusoids(seed, &cfg)?;
            let path = a.output.unwrap_or_else(|| out_dir.join("sinusoids.csv"));
            let column = |v: &[f64]| vec![v.iter().map(|&y| Some(y)).collect()];
            write_table_file(&Table { x: d.x.clone(), columns: column(&d.y) }, &path)?;
            write_table_file(&Table { x: d.x.clone(), columns: column(&d.y_true) }, &sibling(&path, "_truth"))?;
            println!("wrote {} rows to {}", d.x.len(), path.display());
        }
        GenKind::Correlated(args) => {
            let a = merged(args, config)?;
            let kf = DMatrix::from_row_slice(2, 2, &[1.0, a.off_diagonal, a.off_diagonal, 1.0]);
            let d = gen_correlated(seed, a.n, a.l_se, &kf, a.noise_var)?;
            let path = a.output.unwrap_or_else(|| out_dir.join("correlated.csv"));
            write_table_file(&Table::from_mo_dataset(&d.dataset), &path)?;
            let n = d.dataset.len();
            let truth = Table {
                x: d.dataset.x.clone(),
                columns: d.truth.chunks(n).map(|c| c.iter().map(|&v| Some(v)).collect()).collect(),
            };
            write_table_file(&truth, &sibling(&path, "_truth"))?;
            println!("wrote {n} rows to {}", path.display());
        }
    }
    Ok(())
}

fn init_params(a: &FitArgs) -> Result<KernelParams> {
    let d = KernelParams::default_for(a.kernel);
    let p = match d {
        KernelParams::SquaredExponential { length_scale, alpha } => KernelParams::squared_exponential(
            a.length_scale.unwrap_or(length_scale),
            a.alpha.unwrap_or(alpha),
        )?,
        KernelParams::Periodic { frequency, width } => {
            KernelParams::periodic(a.frequency.unwrap_or(frequency), a.width.unwrap_or(width))?
        }
        KernelParams::Chebyshev { a: ca, b: cb } => KernelParams::chebyshev(a.a.unwrap_or(ca), a.b.unwrap_or(cb))?,
    };
    Ok(p)
}

fn parse_path(s: &str) -> Result<TrainPath> {
    match s {
        "auto" => Ok(TrainPath::Auto),
        "fast" => Ok(TrainPath::Fast),
        "general" => Ok(TrainPath::General),
        other => bail!("invalid value for path: `{other}` (expected auto, fast or general)"),
    }
}

fn column_variance(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Returns whether the optimizer converged.
fn fit(args: FitArgs, out_dir: &Path, config: Option<&Value>) -> Result<bool> {
    let a = merged(args, config)?;
    let data = a.data.clone().ok_or_else(|| anyhow!("missing field data (pass --data <csv>)"))?;
    let table = read_table_file(&data).with_context(|| format!("reading {}", data.display()))?;
    let optimizer = OptimizerConfig {
        max_iters: a.max_iters,
        initial_step: a.initial_step,
        grad_tol: a.grad_tol,
        step_shrink: a.step_shrink,
        step_grow: a.step_grow,
        seed: 0,
    };
    let params = init_params(&a)?;
    let path = parse_path(&a.path)?;
    let model_path = a.model.clone().unwrap_or_else(|| out_dir.join("model.json"));
    let trace_path = a.trace.clone().unwrap_or_else(|| out_dir.join("trace.csv"));
    for p in [&model_path, &trace_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
    }
    let (model, trace) = if table.outputs() == 1 {
        let y: Vec<f64> = table.columns[0].iter().flatten().copied().collect();
        let (_, default_noise) = default_init(a.kernel, a.n, &y);
        let ds = table.to_dataset(a.noise_variance.unwrap_or(default_noise))?;
        let spec = ModelSpec::new(params, a.n).with_signal_variance(a.signal_variance);
        let active = a.train.clone().unwrap_or_else(|| {
            let mut h = a.kernel.hyperparameters().to_vec();
            h.extend([Hyper::SignalVariance, Hyper::NoiseVariance]);
            h
        });
        let t = train(&ds, &spec, &active, path, &optimizer)?;
        println!(
            "{} path, {} iterations, LML {:.6}, converged {}",
            if t.fast_path { "eigenvalue-only" } else { "general" },
            t.trace.records.len() - 1,
            t.trace.final_lml().unwrap_or(f64::NAN),
            t.trace.converged
        );
        (Model::Single(t.model), t.trace)
    } else {
        let m = table.outputs();
        let active = a.train.clone().unwrap_or_else(|| a.kernel.hyperparameters().to_vec());
        if let Some(h) = active.iter().find(|h| !h.is_kernel()) {
            bail!("invalid value for train: {h} is not trainable this way for multi-output data (use --learn-noise; K_f carries the signal variance)");
        }
        let noise: Vec<f64> = (0..m)
            .map(|k| a.noise_variance.unwrap_or_else(|| column_variance(table.columns[k].iter().flatten().copied()) / 10.0))
            .collect();
        let ds = table.to_mo_dataset(MONoise::per_output(&noise))?;
        let t = mo_train(&ds, &params, a.n, &CoregionalizationMatrix::identity(m), &active, a.learn_noise, &optimizer)?;
        println!(
            "{} outputs, {} iterations, LML {:.6}, converged {}",
            m,
            t.trace.records.len() - 1,
            t.trace.final_lml().unwrap_or(f64::NAN),
            t.trace.converged
        );
        (Model::Multi(t.model), t.trace)
    };
    model.save(&model_path)?;
    write_trace(&trace, &trace_path)?;
    println!("wrote {} and {}", model_path.display(), trace_path.display());
    Ok(trace.converged)
}

fn write_trace(trace: &TrainingTrace, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    trace.write_csv(f)?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi, count] = parts.as_slice() else { bail!("invalid value for grid: expected lo,hi,count") };
    let lo: f64 = lo.parse().context("grid lo")?;
    let hi: f64 = hi.parse().context("grid hi")?;
    let count: usize = count.parse().context("grid count")?;
    if count == 0 {
        bail!("invalid value for grid: count must be positive");
    }
    Ok(famgp::mercer::linspace(lo, hi, count))
}

fn predict(args: PredictArgs, out_dir: &Path, config: Option<&Value>) -> Result<()> {
    let a = merged(args, config)?;
    let model_path = a.model.clone().ok_or_else(|| anyhow!("missing field model (pass --model <json>)"))?;
    let model = Model::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let x = match (&a.data, &a.grid) {
        (Some(p), None) => {
            let t = NumericTable::read(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
            t.column("x").ok_or_else(|| anyhow!("{}: header is missing column x", p.display()))?.to_vec()
        }
        (None, Some(g)) => parse_grid(g)?,
        _ => bail!("pass exactly one of --data or --grid"),
    };
    let table = model.predict_table(&x, &a.derivative, a.variance)?;
    let out = a.output.clone().unwrap_or_else(|| out_dir.join("predictions.csv"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.write_file(&out)?;
    println!("wrote {} predictions to {}", x.len(), out.display());
    Ok(())
}

fn bench(args: BenchArgs, seed: Option<u64>, out_dir: &Path, config: Option<&Value>) -> Result<()> {
    let mut c = ExperimentConfig::preset(args.kind);
    if let Some(n) = args.n {
        c.n = n;
    }
    if let Some(s) = args.sizes {
        c.sizes = s;
    }
    if let Some(o) = args.orders {
        c.orders = o;
    }
    if let Some(s) = args.seeds {
        c.seeds = s;
    } else if let Some(s) = seed {
        c.seeds = vec![s];
    }
    c.out_dir = Some(out_dir.to_path_buf());
    let c = merged(c, config)?;
    let report = experiments::run(&c)?;
    for (k, v) in &report.summary {
        println!("{k} = {v:.6}");
    }
    println!("wrote report to {}", c.out_dir.unwrap_or_default().display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config: Option<Value> = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            if !v.is_object() {
                bail!("config {} must hold a JSON object", p.display());
            }
            Some(v)
        }
        None => None,
    };
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::GenData { kind } => gen_data(kind, seed, &cli.out_dir, config.as_ref())?,
        Command::Fit(a) => {
            if !fit(a, &cli.out_dir, config.as_ref())? {
                eprintln!("warning: optimizer stopped before meeting grad_tol; model written anyway");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Predict(a) => predict(a, &cli.out_dir, config.as_ref())?,
        Command::Bench(a) => bench(a, cli.seed, &cli.out_dir, config.as_ref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
