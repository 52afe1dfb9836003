//! Hyperparameter training for the approximate and the dense models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact::{exact_lml_and_grad, exact_mo_lml_and_grads, ExactGp, ExactMoGp, ExactSpec, KernelSource};
use crate::gp::{lml_and_grads, Dataset, FastStats, FittedModel, ModelSpec, NoiseVariance};
use crate::kernel::{Hyper, KernelKind, KernelParams};
use crate::multioutput::{
    mo_fit, mo_lml_and_grads, CoregionalizationMatrix, MODataset, MOFastStats, MOFittedModel, MONoise,
};
use crate::optimize::{optimize, OptimizerConfig, ParamTransform, ParamVector, TrainingTrace};

pub fn hyper_transform(h: Hyper) -> ParamTransform {
    match h {
        Hyper::ChebA => ParamTransform::unit_closed(),
        Hyper::ChebB => ParamTransform::unit_open(),
        _ => ParamTransform::Log,
    }
}

fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Starting point: default kernel parameters, unit signal variance and noise var(Y)/10.
pub fn default_init(kind: KernelKind, n: usize, y: &[f64]) -> (ModelSpec, f64) {
    let v = variance(y);
    let noise = if v > 0.0 && v.is_finite() { v / 10.0 } else { 0.1 };
    (ModelSpec::new(KernelParams::default_for(kind), n), noise)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainPath {
    #[default]
    Auto,
    Fast,
    General,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: FittedModel,
    pub spec: ModelSpec,
    pub trace: TrainingTrace,
    pub params: ParamVector,
    pub fast_path: bool,
}

impl Trained {
    pub fn noise_variance(&self) -> Option<f64> {
        self.model.noise().homoscedastic()
    }
}

fn check_active(kind: KernelKind, active: &[Hyper], noise: &NoiseVariance) -> Result<()> {
    for (i, h) in active.iter().enumerate() {
        if active[..i].contains(h) {
            return Err(invalid("active", format!("{h} listed twice")));
        }
        match h {
            Hyper::SignalVariance => {}
            Hyper::NoiseVariance => {
                if noise.homoscedastic().is_none() {
                    return Err(Error::UnknownParameter("noise_variance (per-point noise is not trainable)".into()));
                }
            }
            _ if kind.hyperparameters().contains(h) => {}
            _ => return Err(Error::UnknownParameter(h.to_string())),
        }
    }
    Ok(())
}

fn initial_vector(spec: &ModelSpec, noise: &NoiseVariance, active: &[Hyper]) -> Result<ParamVector> {
    let mut pv = ParamVector::new();
    for &h in active {
        let v = match h {
            Hyper::SignalVariance => spec.signal_variance,
            Hyper::NoiseVariance => noise.homoscedastic().unwrap_or(1.0),
            _ => spec.params.get(h)?,
        };
        pv.push(h.to_string(), v, hyper_transform(h))?;
    }
    Ok(pv)
}

/// Applies the vector's values to `base`; returns the spec and a noise override.
fn decode(base: &ModelSpec, active: &[Hyper], pv: &ParamVector) -> Result<(ModelSpec, Option<f64>)> {
    let mut spec = *base;
    let mut noise = None;
    for (i, &h) in active.iter().enumerate() {
        let v = pv.value(i);
        match h {
            Hyper::SignalVariance => spec.signal_variance = v,
            Hyper::NoiseVariance => noise = Some(v),
            _ => spec.params = spec.params.with(h, v)?,
        }
    }
    spec.validate()?;
    Ok((spec, noise))
}

fn eigen_only(kind: KernelKind, active: &[Hyper]) -> bool {
    active.iter().all(|&h| kind.is_eigenvalue_only(h))
}

/// Trains `active` starting from `init` and the dataset's noise, picking the cached-statistics
/// path when every active parameter only enters the eigenvalues.
pub fn train(ds: &Dataset, init: &ModelSpec, active: &[Hyper], path: TrainPath, config: &OptimizerConfig) -> Result<Trained> {
    match path {
        TrainPath::Fast => train_fast_path(ds, init, active, config),
        TrainPath::General => train_general(ds, init, active, config),
        TrainPath::Auto if eigen_only(init.params.kind(), active) => train_fast_path(ds, init, active, config),
        TrainPath::Auto => train_general(ds, init, active, config),
    }
}

pub fn train_fast_path(ds: &Dataset, init: &ModelSpec, active: &[Hyper], config: &OptimizerConfig) -> Result<Trained> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let kind = init.params.kind();
    check_active(kind, active, &ds.noise)?;
    if let Some(h) = active.iter().find(|&&h| !kind.is_eigenvalue_only(h)) {
        return Err(Error::NotEigenvalueOnly(h.to_string()));
    }
    let stats = FastStats::new(ds, init)?;
    let pv = initial_vector(init, &ds.noise, active)?;
    let (best, trace) = optimize(
        |p| {
            let (spec, noise) = decode(init, active, p)?;
            stats.evaluate(&spec, noise, active)
        },
        pv,
        config,
    )?;
    let (spec, noise) = decode(init, active, &best)?;
    let model = stats.fit(&spec, noise)?;
    Ok(Trained { model, spec, trace, params: best, fast_path: true })
}

pub fn train_general(ds: &Dataset, init: &ModelSpec, active: &[Hyper], config: &OptimizerConfig) -> Result<Trained> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_active(init.params.kind(), active, &ds.noise)?;
    let pv = initial_vector(init, &ds.noise, active)?;
    let with_noise = |noise: Option<f64>| match noise {
        Some(v) => ds.with_noise(v),
        None => Ok(ds.clone()),
    };
    let (best, trace) = optimize(
        |p| {
            let (spec, noise) = decode(init, active, p)?;
            lml_and_grads(&with_noise(noise)?, &spec, active)
        },
        pv,
        config,
    )?;
    let (spec, noise) = decode(init, active, &best)?;
    let model = crate::gp::fit(&with_noise(noise)?, &spec)?;
    Ok(Trained { model, spec, trace, params: best, fast_path: false })
}

#[derive(Clone, Debug)]
pub struct TrainedExact {
    pub model: ExactGp,
    pub spec: ExactSpec,
    pub noise_variance: Option<f64>,
    pub trace: TrainingTrace,
}

/// Dense-GP counterpart of [`train_general`].
pub fn train_exact(ds: &Dataset, init: ExactSpec, active: &[Hyper], config: &OptimizerConfig) -> Result<TrainedExact> {
    check_active(init.params.kind(), active, &ds.noise)?;
    let base = ModelSpec { params: init.params, n: 1, signal_variance: init.signal_variance };
    let pv = initial_vector(&base, &ds.noise, active)?;
    let build = |p: &ParamVector| -> Result<(ExactSpec, Dataset, Option<f64>)> {
        let (s, noise) = decode(&base, active, p)?;
        let d = match noise {
            Some(v) => ds.with_noise(v)?,
            None => ds.clone(),
        };
        Ok((ExactSpec { params: s.params, signal_variance: s.signal_variance, source: init.source }, d, noise))
    };
    let (best, trace) = optimize(
        |p| {
            let (spec, d, _) = build(p)?;
            exact_lml_and_grad(&d, spec, active)
        },
        pv,
        config,
    )?;
    let (spec, d, noise) = build(&best)?;
    let model = ExactGp::fit(&d, spec)?;
    Ok(TrainedExact { model, spec, noise_variance: noise.or(ds.noise.homoscedastic()), trace })
}

/// Cholesky-factor entries as named unconstrained parameters (log diagonal, raw off-diagonal).
fn push_cholesky(pv: &mut ParamVector, l: &DMatrix<f64>) -> Result<()> {
    for i in 0..l.nrows() {
        for j in 0..=i {
            let t = if i == j { ParamTransform::Log } else { ParamTransform::Identity };
            pv.push(format!("L[{i},{j}]"), l[(i, j)], t)?;
        }
    }
    Ok(())
}

fn read_cholesky(pv: &ParamVector, offset: usize, m: usize) -> Result<CoregionalizationMatrix> {
    let mut l = DMatrix::zeros(m, m);
    let mut k = offset;
    for i in 0..m {
        for j in 0..=i {
            l[(i, j)] = pv.value(k);
            k += 1;
        }
    }
    CoregionalizationMatrix::from_cholesky(l)
}

fn lower_entries(g: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..g.nrows()).flat_map(move |i| (0..=i).map(move |j| g[(i, j)]))
}

fn diagonal_noise(noise: &MONoise) -> Option<Vec<f64>> {
    match noise {
        MONoise::Separable(s) => {
            let m = s.nrows();
            let diag = (0..m).all(|i| (0..m).all(|j| i == j || s[(i, j)] == 0.0));
            diag.then(|| (0..m).map(|k| s[(k, k)]).collect())
        }
        MONoise::Full(_) => None,
    }
}

#[derive(Clone, Debug)]
pub struct MOTrained {
    pub model: MOFittedModel,
    pub params: KernelParams,
    pub kf: CoregionalizationMatrix,
    pub noise: MONoise,
    pub trace: TrainingTrace,
    pub vector: ParamVector,
    pub fast_path: bool,
}

/// Learns the kernel hyperparameters in `hypers`, the Cholesky factor of `K_f`, and with
/// `learn_noise` the per-output noise variances (diagonal separable noise only).
pub fn mo_train(
    ds: &MODataset,
    init: &KernelParams,
    n: usize,
    kf_init: &CoregionalizationMatrix,
    hypers: &[Hyper],
    learn_noise: bool,
    config: &OptimizerConfig,
) -> Result<MOTrained> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if kf_init.m() != ds.m {
        return Err(Error::Dimension(format!("K_f is {}×{}, data has {} outputs", kf_init.m(), kf_init.m(), ds.m)));
    }
    let kind = init.kind();
    for h in hypers {
        if !kind.hyperparameters().contains(h) {
            return Err(Error::UnknownParameter(h.to_string()));
        }
    }
    let m = ds.m;
    let noise0 = if learn_noise {
        Some(diagonal_noise(&ds.noise).ok_or_else(|| {
            Error::UnknownParameter("noise_variance (only diagonal separable noise is trainable)".into())
        })?)
    } else {
        None
    };
    let mut pv = ParamVector::new();
    for &h in hypers {
        pv.push(h.to_string(), init.get(h)?, hyper_transform(h))?;
    }
    let l_off = pv.len();
    push_cholesky(&mut pv, kf_init.l())?;
    let noise_off = pv.len();
    if let Some(v) = &noise0 {
        for (k, &s) in v.iter().enumerate() {
            pv.push(format!("noise_variance[{k}]"), s, ParamTransform::Log)?;
        }
    }
    let decode = |p: &ParamVector| -> Result<(KernelParams, CoregionalizationMatrix, MONoise)> {
        let mut params = *init;
        for (i, &h) in hypers.iter().enumerate() {
            params = params.with(h, p.value(i))?;
        }
        let kf = read_cholesky(p, l_off, m)?;
        let noise = match noise0 {
            Some(_) => MONoise::per_output(&(0..m).map(|k| p.value(noise_off + k)).collect::<Vec<_>>()),
            None => ds.noise.clone(),
        };
        Ok((params, kf, noise))
    };
    let flatten = |g: crate::multioutput::MOGradients| -> (f64, Vec<f64>) {
        let mut v = g.kernel.clone();
        v.extend(lower_entries(&g.l));
        v.extend(g.noise.iter().copied());
        (g.lml, v)
    };
    let fast = eigen_only(kind, hypers) && matches!(ds.noise, MONoise::Separable(_));
    let (best, trace) = if fast {
        let stats = MOFastStats::new(ds, init, n)?;
        optimize(
            |p| {
                let (params, kf, noise) = decode(p)?;
                let MONoise::Separable(s) = &noise else { unreachable!() };
                Ok(flatten(stats.evaluate(&params, &kf, s, hypers, learn_noise)?))
            },
            pv,
            config,
        )?
    } else {
        optimize(
            |p| {
                let (params, kf, noise) = decode(p)?;
                let d = if learn_noise { ds.with_noise(noise)? } else { ds.clone() };
                Ok(flatten(mo_lml_and_grads(&d, &params, n, &kf, hypers, learn_noise)?))
            },
            pv,
            config,
        )?
    };
    let (params, kf, noise) = decode(&best)?;
    let model = mo_fit(&ds.with_noise(noise.clone())?, &params, n, &kf)?;
    Ok(MOTrained { model, params, kf, noise, trace, vector: best, fast_path: fast })
}

#[derive(Clone, Debug)]
pub struct MOTrainedExact {
    pub model: ExactMoGp,
    pub params: KernelParams,
    pub kf: CoregionalizationMatrix,
    pub trace: TrainingTrace,
}

/// Dense counterpart of [`mo_train`] with the noise held fixed.
pub fn mo_train_exact(
    ds: &MODataset,
    init: &KernelParams,
    source: KernelSource,
    kf_init: &CoregionalizationMatrix,
    hypers: &[Hyper],
    config: &OptimizerConfig,
) -> Result<MOTrainedExact> {
    let m = ds.m;
    let mut pv = ParamVector::new();
    for &h in hypers {
        pv.push(h.to_string(), init.get(h)?, hyper_transform(h))?;
    }
    let l_off = pv.len();
    push_cholesky(&mut pv, kf_init.l())?;
    let decode = |p: &ParamVector| -> Result<(KernelParams, CoregionalizationMatrix)> {
        let mut params = *init;
        for (i, &h) in hypers.iter().enumerate() {
            params = params.with(h, p.value(i))?;
        }
        Ok((params, read_cholesky(p, l_off, m)?))
    };
    let (best, trace) = optimize(
        |p| {
            let (params, kf) = decode(p)?;
            let (lml, mut g, gl) = exact_mo_lml_and_grads(ds, params, source, &kf, hypers)?;
            g.extend(lower_entries(&gl));
            Ok((lml, g))
        },
        pv,
        config,
    )?;
    let (params, kf) = decode(&best)?;
    let model = ExactMoGp::fit(ds, params, source, &kf)?;
    Ok(MOTrainedExact { model, params, kf, trace })
}
