//! Benchmark suites: timing scaling, accuracy against sample count and truncation order,
//! and coregionalization recovery. Each suite returns a [`BenchReport`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_correlated, gen_sinusoids, rmse, FrequencyMode, SinusoidConfig, CORRELATED_MAX_NM};
use crate::error::{invalid, Error, Result};
use crate::exact::{exact_lml_and_grad, ExactSpec, KernelSource, SizeLimits};
use crate::gp::{lml_and_grads, CovarianceMode, Dataset, FastStats, FittedModel, ModelSpec};
use crate::io::{read_table_file, NumericTable};
use crate::kernel::{Hyper, KernelKind, KernelParams};
use crate::multioutput::{mo_fit, CoregionalizationMatrix, MOFittedModel};
use crate::optimize::OptimizerConfig;
use crate::train::{default_init, mo_train, mo_train_exact, train, train_exact, TrainPath};
use crate::transform::InputTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    Scaling,
    RmseSamples,
    RmseEigs,
    Correlation,
}

impl BenchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchKind::Scaling => "scaling",
            BenchKind::RmseSamples => "rmse-samples",
            BenchKind::RmseEigs => "rmse-eigs",
            BenchKind::Correlation => "correlation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// dense GP with the closed-form SE kernel
    Exact,
    /// SE expansion; the length scale moves Φ, so every step rebuilds it
    SeApprox,
    /// Chebyshev expansion; `a`, `b` only enter the eigenvalues
    ChApprox,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::SeApprox => "se-approx",
            Method::ChApprox => "ch-approx",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelatedConfig {
    pub n_total: usize,
    /// leading points used for learning `K_f` and the length scale
    pub train: usize,
    pub l_se: f64,
    /// row-major `M×M`
    pub kf: Vec<Vec<f64>>,
    pub noise_var: f64,
    pub init_l: f64,
    /// output whose values after the training region are hidden when fitting
    pub masked_output: usize,
    pub learn_noise: bool,
}

impl Default for CorrelatedConfig {
    fn default() -> Self {
        CorrelatedConfig {
            n_total: 900,
            train: 600,
            l_se: 0.1,
            kf: vec![vec![1.0, -0.95], vec![-0.95, 1.0]],
            noise_var: 0.05,
            init_l: 0.5,
            masked_output: 1,
            learn_noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum DataSpec {
    Sinusoids(SinusoidConfig),
    Correlated(CorrelatedConfig),
    /// single-output CSV; RMSE is then measured against the observed outputs
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub id: BenchKind,
    pub methods: Vec<Method>,
    /// truncation order
    pub n: usize,
    pub data: DataSpec,
    pub optimizer: OptimizerConfig,
    pub out_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// sample counts for scaling and rmse-samples
    pub sizes: Vec<usize>,
    /// truncation orders for rmse-eigs
    pub orders: Vec<usize>,
    /// timed evaluations per repetition
    pub iterations: usize,
    pub exact_iterations: usize,
    pub repeats: usize,
    pub exact_max_n: usize,
    /// largest N for the Φ-recomputing method when training
    pub se_max_n: usize,
    /// seeds (from the front of `seeds`) that also run the dense model in the correlation suite
    pub exact_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(BenchKind::Scaling)
    }
}

impl ExperimentConfig {
    pub fn preset(id: BenchKind) -> Self {
        let base = ExperimentConfig {
            id,
            methods: vec![Method::Exact, Method::SeApprox, Method::ChApprox],
            n: 75,
            data: DataSpec::Sinusoids(SinusoidConfig::default()),
            optimizer: OptimizerConfig::default(),
            out_dir: None,
            seeds: vec![0, 1, 2],
            sizes: vec![250, 500, 1000, 2000, 10_000, 100_000],
            orders: (2..=10).map(|k| k * 10).collect(),
            iterations: 100,
            exact_iterations: 3,
            repeats: 3,
            exact_max_n: 2000,
            se_max_n: 100_000,
            exact_seeds: 1,
        };
        match id {
            BenchKind::Scaling => ExperimentConfig { seeds: vec![0], ..base },
            BenchKind::RmseSamples => ExperimentConfig {
                sizes: vec![500, 1000, 2000, 10_000, 100_000, 1_000_000],
                optimizer: OptimizerConfig { max_iters: 2000, grad_tol: 1e-6, ..Default::default() },
                ..base
            },
            BenchKind::RmseEigs => ExperimentConfig {
                methods: vec![Method::Exact, Method::SeApprox],
                data: DataSpec::Sinusoids(even_sinusoid_data()),
                seeds: vec![1],
                optimizer: OptimizerConfig { max_iters: 1000, ..Default::default() },
                ..base
            },
            BenchKind::Correlation => ExperimentConfig {
                methods: vec![Method::Exact, Method::SeApprox],
                data: DataSpec::Correlated(CorrelatedConfig::default()),
                seeds: vec![1, 2, 3],
                optimizer: OptimizerConfig { max_iters: 2000, ..Default::default() },
                ..base
            },
        }
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if self.repeats == 0 || self.iterations == 0 || self.exact_iterations == 0 {
            return Err(invalid("repeats", "repeats and iteration counts must be positive"));
        }
        Ok(())
    }
}

/// Sum of 10 sinusoids with evenly spaced frequencies on (−1, 1), σ = 0.1.
pub fn even_sinusoid_data() -> SinusoidConfig {
    SinusoidConfig { n: 500, x_range: (-1.0, 1.0), noise_sd: 0.1, frequencies: FrequencyMode::Even, ..Default::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub case: String,
    pub method: String,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n_samples: usize,
    #[serde(rename = "M")]
    pub outputs: usize,
    pub n: usize,
    pub iters: usize,
    pub seconds: f64,
    /// one-time cost outside the timed loop
    pub setup_seconds: Option<f64>,
    pub rmse: Option<f64>,
    pub params: BTreeMap<String, f64>,
    pub config_hash: String,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_count: usize,
    pub debug_assertions: bool,
    pub target_arch: String,
    pub target_os: String,
    pub crate_version: String,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            cpu_count: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            debug_assertions: cfg!(debug_assertions),
            target_arch: std::env::consts::ARCH.into(),
            target_os: std::env::consts::OS.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub cases: Vec<BenchRow>,
    /// derived figures: slopes, medians, ratios
    pub summary: BTreeMap<String, f64>,
    pub environment: Environment,
}

impl BenchReport {
    fn new(config: &ExperimentConfig) -> Self {
        BenchReport {
            experiment: config.id.as_str().into(),
            config: config.clone(),
            cases: Vec::new(),
            summary: BTreeMap::new(),
            environment: Environment::current(),
        }
    }

    pub fn rows(&self, method: &str) -> impl Iterator<Item = &BenchRow> + '_ {
        let method = method.to_string();
        self.cases.iter().filter(move |r| r.method == method)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// One row per case; `params` is flattened to `name=value` pairs joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["case", "method", "seed", "N", "M", "n", "iters", "seconds", "setup_seconds", "rmse", "params", "config_hash", "skipped"])?;
        for r in &self.cases {
            let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
            w.write_record([
                r.case.clone(),
                r.method.clone(),
                r.seed.to_string(),
                r.n_samples.to_string(),
                r.outputs.to_string(),
                r.n.to_string(),
                r.iters.to_string(),
                format!("{:?}", r.seconds),
                r.setup_seconds.map(|v| format!("{v:?}")).unwrap_or_default(),
                r.rmse.map(|v| format!("{v:?}")).unwrap_or_default(),
                params.join(";"),
                r.config_hash.clone(),
                r.skipped.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<id>.json` and `<id>.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_json(&dir.join(format!("{}.json", self.experiment)))?;
        self.write_csv(BufWriter::new(File::create(dir.join(format!("{}.csv", self.experiment)))?))
    }
}

pub fn run(config: &ExperimentConfig) -> Result<BenchReport> {
    config.validate()?;
    let report = match config.id {
        BenchKind::Scaling => bench_scaling(config)?,
        BenchKind::RmseSamples => bench_rmse_vs_samples(config)?,
        BenchKind::RmseEigs => bench_rmse_vs_eigs(config)?,
        BenchKind::Correlation => bench_correlation(config)?,
    };
    if let Some(dir) = &config.out_dir {
        report.write_to(dir)?;
    }
    Ok(report)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn sinusoid_config(config: &ExperimentConfig) -> Result<SinusoidConfig> {
    match &config.data {
        DataSpec::Sinusoids(c) => Ok(*c),
        _ => Err(invalid("data", format!("{} needs the sinusoids generator", config.id.as_str()))),
    }
}

/// Median over repetitions of the mean time per call of `f`.
fn time_per_call(repeats: usize, iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    f()?; // warm-up
    for _ in 0..repeats {
        let t = Instant::now();
        for _ in 0..iters {
            f()?;
        }
        times.push(t.elapsed().as_secs_f64() / iters as f64);
    }
    Ok(median(times))
}

/// Mean predictions in fixed-size chunks so the basis matrix stays small.
pub fn predict_mean_chunked(model: &FittedModel, x: &[f64]) -> Result<Vec<f64>> {
    const CHUNK: usize = 8192;
    let mut out = Vec::with_capacity(x.len());
    for c in x.chunks(CHUNK) {
        out.extend(model.predict(c, CovarianceMode::None)?.mean.iter());
    }
    Ok(out)
}

fn row(config: &ExperimentConfig, method: Method, seed: u64, n_samples: usize, n: usize) -> BenchRow {
    BenchRow {
        case: config.id.as_str().into(),
        method: method.as_str().into(),
        seed,
        n_samples,
        outputs: 1,
        n,
        iters: 0,
        seconds: 0.0,
        setup_seconds: None,
        rmse: None,
        params: BTreeMap::new(),
        config_hash: config.hash(),
        skipped: None,
    }
}

fn se_init(l: f64) -> KernelParams {
    KernelParams::SquaredExponential { length_scale: l, alpha: 1.0 }
}

/// Per-evaluation LML+gradient time against N. The eigenvalue-only method builds its cached
/// statistics once outside the timed loop (reported as `setup_seconds`).
pub fn bench_scaling(config: &ExperimentConfig) -> Result<BenchReport> {
    let base = sinusoid_config(config)?;
    let seed = config.seeds[0];
    let mut report = BenchReport::new(config);
    let mut points: BTreeMap<Method, Vec<(f64, f64)>> = BTreeMap::new();
    let noise = base.noise_sd.powi(2).max(1e-6);
    for &size in &config.sizes {
        let data = gen_sinusoids(seed, &SinusoidConfig { n: size, ..base })?;
        let ds = data.dataset(noise)?;
        for &method in &config.methods {
            let mut r = row(config, method, seed, size, config.n);
            match method {
                Method::Exact => {
                    if size > config.exact_max_n {
                        r.skipped = Some(format!("N > exact_max_n = {}", config.exact_max_n));
                    } else {
                        let spec = ExactSpec::closed(se_init(0.5));
                        r.iters = config.exact_iterations;
                        r.n = 0;
                        r.seconds = time_per_call(config.repeats, r.iters, || {
                            exact_lml_and_grad(&ds, spec, &[Hyper::LengthScale]).map(drop)
                        })?;
                    }
                }
                Method::SeApprox => {
                    let spec = ModelSpec::new(se_init(0.5), config.n);
                    r.iters = if size > 10_000 { config.exact_iterations } else { config.iterations };
                    r.seconds = time_per_call(config.repeats, r.iters, || {
                        lml_and_grads(&ds, &spec, &[Hyper::LengthScale]).map(drop)
                    })?;
                }
                Method::ChApprox => {
                    let spec = ModelSpec::new(KernelParams::Chebyshev { a: 0.5, b: 0.5 }, config.n);
                    let t = Instant::now();
                    let stats = FastStats::new(&ds, &spec)?;
                    r.setup_seconds = Some(t.elapsed().as_secs_f64());
                    r.iters = config.iterations;
                    r.seconds = time_per_call(config.repeats, r.iters, || {
                        stats.evaluate(&spec, None, &[Hyper::ChebA, Hyper::ChebB]).map(drop)
                    })?;
                }
            }
            if r.skipped.is_none() {
                points.entry(method).or_default().push((size as f64, r.seconds));
            }
            log::info!("scaling {} N={size}: {:.3e} s/eval", method.as_str(), r.seconds);
            report.cases.push(r);
        }
    }
    for (m, p) in points {
        report.summary.insert(format!("slope/{}", m.as_str()), loglog_slope(&p));
    }
    Ok(report)
}

/// Trained-model RMSE against the noise-free signal as N grows, with the noise variance
/// fixed at its generating value.
pub fn bench_rmse_vs_samples(config: &ExperimentConfig) -> Result<BenchReport> {
    let base = sinusoid_config(config)?;
    let noise = base.noise_sd.powi(2);
    if !(noise > 0.0) {
        return Err(invalid("noise_sd", "rmse-samples needs positive noise"));
    }
    let mut report = BenchReport::new(config);
    let mut by_cell: BTreeMap<(Method, usize), Vec<f64>> = BTreeMap::new();
    for &seed in &config.seeds {
        for &size in &config.sizes {
            let data = gen_sinusoids(seed, &SinusoidConfig { n: size, ..base })?;
            let ds = data.dataset(noise)?;
            for &method in &config.methods {
                let mut r = row(config, method, seed, size, config.n);
                let t = Instant::now();
                let cap = match method {
                    Method::Exact => config.exact_max_n,
                    Method::SeApprox => config.se_max_n,
                    Method::ChApprox => usize::MAX,
                };
                if size > cap {
                    r.skipped = Some(format!("N > {cap}"));
                    report.cases.push(r);
                    continue;
                }
                let (pred, iters, params) = match method {
                    Method::Exact => {
                        let active = [Hyper::LengthScale, Hyper::SignalVariance];
                        let (init, _) = default_init(KernelKind::SquaredExponential, config.n, &data.y);
                        let tr = train_exact(&ds, ExactSpec::closed(init.params), &active, &config.optimizer)?;
                        let p = tr.model.predict(&data.x, CovarianceMode::None)?;
                        let raw = tr.model.transform().params_to_raw(tr.spec.params);
                        let mut params = hyper_map(&raw);
                        params.insert("signal_variance".into(), tr.spec.signal_variance);
                        (p.mean.as_slice().to_vec(), tr.trace.records.len() - 1, params)
                    }
                    Method::SeApprox | Method::ChApprox => {
                        let (init, active): (ModelSpec, &[Hyper]) = if method == Method::ChApprox {
                            (ModelSpec::new(KernelParams::Chebyshev { a: 0.5, b: 0.5 }, config.n), &[Hyper::ChebA, Hyper::ChebB])
                        } else {
                            (default_init(KernelKind::SquaredExponential, config.n, &data.y).0, &[Hyper::LengthScale, Hyper::SignalVariance])
                        };
                        let tr = train(&ds, &init, active, TrainPath::Auto, &config.optimizer)?;
                        let raw = tr.model.transform().params_to_raw(tr.spec.params);
                        let mut params = hyper_map(&raw);
                        params.insert("signal_variance".into(), tr.spec.signal_variance);
                        (predict_mean_chunked(&tr.model, &data.x)?, tr.trace.records.len() - 1, params)
                    }
                };
                r.seconds = t.elapsed().as_secs_f64();
                r.iters = iters;
                let e = rmse(&pred, &data.y_true);
                r.rmse = Some(e);
                r.params = params;
                by_cell.entry((method, size)).or_default().push(e);
                log::info!("rmse-samples {} seed={seed} N={size}: rmse {e:.4}", method.as_str());
                report.cases.push(r);
            }
        }
    }
    for ((m, size), v) in by_cell {
        report.summary.insert(format!("median_rmse/{}/{size}", m.as_str()), median(v));
    }
    Ok(report)
}

fn hyper_map(p: &KernelParams) -> BTreeMap<String, f64> {
    p.kind().hyperparameters().iter().filter_map(|&h| p.get(h).ok().map(|v| (h.to_string(), v))).collect()
}

struct Observed {
    x: Vec<f64>,
    y: Vec<f64>,
    truth: Vec<f64>,
}

fn single_output_data(config: &ExperimentConfig, seed: u64) -> Result<Observed> {
    match &config.data {
        DataSpec::Sinusoids(c) => {
            let d = gen_sinusoids(seed, c)?;
            Ok(Observed { x: d.x, y: d.y, truth: d.y_true })
        }
        DataSpec::Csv { path } => {
            let t = read_table_file(path)?;
            let ds = t.to_dataset(1.0)?;
            Ok(Observed { truth: ds.y.clone(), x: ds.x, y: ds.y })
        }
        DataSpec::Correlated(_) => Err(invalid("data", "rmse-eigs needs single-output data")),
    }
}

/// Sweeps the truncation order, training length scale, signal variance and noise at each,
/// against the dense GP trained on the same data.
pub fn bench_rmse_vs_eigs(config: &ExperimentConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new(config);
    let active = [Hyper::LengthScale, Hyper::SignalVariance, Hyper::NoiseVariance];
    for &seed in &config.seeds {
        let data = single_output_data(config, seed)?;
        let (init, noise) = default_init(KernelKind::SquaredExponential, config.n, &data.y);
        let ds = Dataset::homoscedastic(data.x.clone(), data.y.clone(), noise)?;
        let mut exact_rmse = None;
        if config.has(Method::Exact) {
            let mut r = row(config, Method::Exact, seed, ds.len(), 0);
            if ds.len() > config.exact_max_n {
                r.skipped = Some(format!("N > exact_max_n = {}", config.exact_max_n));
            } else {
                let t = Instant::now();
                let tr = train_exact(&ds, ExactSpec::closed(init.params), &active, &config.optimizer)?;
                r.seconds = t.elapsed().as_secs_f64();
                r.iters = tr.trace.records.len() - 1;
                let p = tr.model.predict(&data.x, CovarianceMode::None)?;
                let e = rmse(p.mean.as_slice(), &data.truth);
                r.rmse = Some(e);
                exact_rmse = Some(e);
                r.params = hyper_map(&tr.model.transform().params_to_raw(tr.spec.params));
                r.params.insert("signal_variance".into(), tr.spec.signal_variance);
                r.params.insert("noise_variance".into(), tr.noise_variance.unwrap_or(f64::NAN));
                r.params.insert("converged".into(), tr.trace.converged as u8 as f64);
                report.summary.insert(format!("exact_rmse/{seed}"), e);
            }
            report.cases.push(r);
        }
        if config.has(Method::SeApprox) {
            for &n in &config.orders {
                let mut r = row(config, Method::SeApprox, seed, ds.len(), n);
                let t = Instant::now();
                let tr = train(&ds, &ModelSpec { n, ..init }, &active, TrainPath::Auto, &config.optimizer)?;
                r.seconds = t.elapsed().as_secs_f64();
                r.iters = tr.trace.records.len() - 1;
                let pred = predict_mean_chunked(&tr.model, &data.x)?;
                let e = rmse(&pred, &data.truth);
                r.rmse = Some(e);
                r.params = hyper_map(&tr.model.transform().params_to_raw(tr.spec.params));
                r.params.insert("signal_variance".into(), tr.spec.signal_variance);
                r.params.insert("noise_variance".into(), tr.noise_variance().unwrap_or(f64::NAN));
                // the unit-variance kernel has total eigenvalue mass 1
                r.params.insert("eigenvalue_mass".into(), tr.model.basis().eigenvalues().sum());
                r.params.insert("converged".into(), tr.trace.converged as u8 as f64);
                if let Some(ex) = exact_rmse {
                    report.summary.insert(format!("rmse_ratio/{seed}/{n}"), e / ex);
                }
                log::info!("rmse-eigs seed={seed} n={n}: rmse {e:.5}");
                report.cases.push(r);
            }
        }
    }
    Ok(report)
}

/// Output of one correlation-recovery run, kept for callers that need more than the rows.
#[derive(Clone, Debug)]
pub struct CorrelationRun {
    pub seed: u64,
    /// learned length scale in raw input units
    pub l_se: f64,
    pub kf: DMatrix<f64>,
    pub correlation: f64,
    pub test_rmse_learned: f64,
    pub test_rmse_identity: f64,
    pub exact: Option<(f64, DMatrix<f64>)>,
}

fn correlated_config(config: &ExperimentConfig) -> Result<&CorrelatedConfig> {
    match &config.data {
        DataSpec::Correlated(c) => Ok(c),
        _ => Err(invalid("data", "correlation needs the correlated generator")),
    }
}

fn kf_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(invalid("kf", "must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// Named prediction tables, written as `<name>.csv`.
pub type PredictionTables = Vec<(String, NumericTable)>;

/// Learns `K_f` and the length scale on the leading `train` points, then refits on all points
/// with `masked_output` hidden past the training region and scores predictions there.
pub fn correlation_run(config: &ExperimentConfig, seed: u64, with_exact: bool) -> Result<(CorrelationRun, Vec<BenchRow>, PredictionTables)> {
    let c = correlated_config(config)?;
    let kf_true = kf_matrix(&c.kf)?;
    let m = kf_true.nrows();
    if c.train == 0 || c.train >= c.n_total {
        return Err(invalid("train", "must lie in 1..n_total"));
    }
    if c.masked_output >= m {
        return Err(invalid("masked_output", format!("must be below {m}")));
    }
    let data = gen_correlated(seed, c.n_total, c.l_se, &kf_true, c.noise_var)?;
    let ds = &data.dataset;
    let train_idx: Vec<usize> = (0..c.train).collect();
    let train_ds = ds.subset(&train_idx)?;
    let init = se_init(c.init_l);
    let mut rows = Vec::new();

    let t = Instant::now();
    let learned = mo_train(&train_ds, &init, config.n, &CoregionalizationMatrix::identity(m), &[Hyper::LengthScale], c.learn_noise, &config.optimizer)?;
    let train_tf = InputTransform::fit(&train_ds.x)?;
    let raw = train_tf.params_to_raw(learned.params);
    let l_se = raw.get(Hyper::LengthScale)?;
    let mut r = row(config, Method::SeApprox, seed, c.train, config.n);
    r.outputs = m;
    r.seconds = t.elapsed().as_secs_f64();
    r.iters = learned.trace.records.len() - 1;
    r.params = kf_params(l_se, &learned.kf);
    r.params.insert("converged".into(), learned.trace.converged as u8 as f64);

    // refit on every point with the learned parameters expressed in the full-data transform
    let full_tf = InputTransform::fit(&ds.x)?;
    let params = full_tf.params_from_raw(raw);
    let cut = train_ds.x[c.train - 1];
    let fit_ds = ds.mask_output(c.masked_output, |x| x > cut)?;
    let n = ds.len();
    let test_x: Vec<f64> = ds.x[c.train..].to_vec();
    let offset = c.masked_output * n;
    let truth_test = &data.truth[offset + c.train..offset + n];
    let mut tables = Vec::new();
    let mut score = |label: &str, kf: &CoregionalizationMatrix| -> Result<(f64, MOFittedModel)> {
        let model = mo_fit(&fit_ds, &params, config.n, kf)?;
        let p = model.predict(&test_x, &[c.masked_output], CovarianceMode::None)?;
        let e = rmse(p.mean.as_slice(), truth_test);
        let table = crate::io::Model::Multi(model.clone()).predict_table(&ds.x, &[0], true)?;
        tables.push((format!("correlation_seed{seed}_{label}.csv"), table));
        Ok((e, model))
    };
    let (e_learned, _) = score("learned", &learned.kf)?;
    let (e_identity, _) = score("identity", &CoregionalizationMatrix::identity(m))?;
    r.rmse = Some(e_learned);
    r.params.insert("test_rmse_identity".into(), e_identity);
    rows.push(r);

    let mut exact = None;
    if with_exact && config.has(Method::Exact) {
        let mut r = row(config, Method::Exact, seed, c.train, 0);
        r.outputs = m;
        if c.train * m > CORRELATED_MAX_NM.min(SizeLimits::default().max_nm) {
            r.skipped = Some("N·M above the dense guard".into());
        } else {
            let t = Instant::now();
            let e = mo_train_exact(&train_ds, &init, KernelSource::Closed, &CoregionalizationMatrix::identity(m), &[Hyper::LengthScale], &config.optimizer)?;
            let l = train_tf.params_to_raw(e.params).get(Hyper::LengthScale)?;
            r.seconds = t.elapsed().as_secs_f64();
            r.iters = e.trace.records.len() - 1;
            r.params = kf_params(l, &e.kf);
            r.params.insert("converged".into(), e.trace.converged as u8 as f64);
            exact = Some((l, e.kf.kf()));
        }
        rows.push(r);
    }
    let run = CorrelationRun {
        seed,
        l_se,
        kf: learned.kf.kf(),
        correlation: learned.kf.correlation(0, 1.min(m - 1)),
        test_rmse_learned: e_learned,
        test_rmse_identity: e_identity,
        exact,
    };
    Ok((run, rows, tables))
}

fn kf_params(l_se: f64, kf: &CoregionalizationMatrix) -> BTreeMap<String, f64> {
    let mut p = BTreeMap::new();
    p.insert("l_se".into(), l_se);
    let k = kf.kf();
    for i in 0..k.nrows() {
        for j in 0..=i {
            p.insert(format!("kf[{i},{j}]"), k[(i, j)]);
        }
    }
    if k.nrows() > 1 {
        p.insert("correlation[0,1]".into(), kf.correlation(0, 1));
    }
    p
}

pub fn bench_correlation(config: &ExperimentConfig) -> Result<BenchReport> {
    let mut report = BenchReport::new(config);
    let mut corr = Vec::new();
    let mut ls = Vec::new();
    let mut ratio = Vec::new();
    for (i, &seed) in config.seeds.iter().enumerate() {
        let (run, rows, tables) = correlation_run(config, seed, i < config.exact_seeds)?;
        if let Some(dir) = &config.out_dir {
            std::fs::create_dir_all(dir)?;
            for (name, t) in tables {
                t.write_file(&dir.join(name))?;
            }
        }
        corr.push(run.correlation);
        ls.push(run.l_se);
        ratio.push(run.test_rmse_identity / run.test_rmse_learned);
        report.cases.extend(rows);
    }
    report.summary.insert("median_correlation".into(), median(corr));
    report.summary.insert("median_l_se".into(), median(ls));
    report.summary.insert("median_rmse_ratio".into(), median(ratio));
    Ok(report)
}

/// Median of a slice, NaN when empty.
pub fn median_of(v: &[f64]) -> f64 {
    median(v.to_vec())
}

impl std::str::FromStr for BenchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(BenchKind::Scaling),
            "rmse-samples" => Ok(BenchKind::RmseSamples),
            "rmse-eigs" => Ok(BenchKind::RmseEigs),
            "correlation" => Ok(BenchKind::Correlation),
            other => Err(Error::Parse(format!("unknown benchmark `{other}`"))),
        }
    }
}
