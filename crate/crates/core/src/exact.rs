//! Dense reference GP: `O(N³)` fit, prediction, likelihood and gradients.
//!
//! Uses the same input normalization as the approximate models so hyperparameters
//! are directly comparable.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::gp::{CovarianceMode, Dataset, NoiseVariance, Posterior};
use crate::kernel::{kernel_eval, kernel_grad, Hyper, KernelParams};
use crate::linalg::{symmetrize, SpdFactor};
use crate::mercer::MercerBasis;
use crate::multioutput::{CoregionalizationMatrix, MODataset, MONoise};
use crate::transform::InputTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeLimits {
    pub max_n: usize,
    pub max_nm: usize,
}

impl Default for SizeLimits {
    fn default() -> Self {
        SizeLimits { max_n: 4000, max_nm: 6000 }
    }
}

/// Which kernel the dense model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSource {
    /// The exact closed form.
    Closed,
    /// `Φ Λ Φᵀ` with the given truncation order.
    Reconstructed { n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactSpec {
    pub params: KernelParams,
    pub signal_variance: f64,
    pub source: KernelSource,
}

impl ExactSpec {
    pub fn closed(params: KernelParams) -> Self {
        ExactSpec { params, signal_variance: 1.0, source: KernelSource::Closed }
    }

    pub fn reconstructed(params: KernelParams, n: usize) -> Self {
        ExactSpec { params, signal_variance: 1.0, source: KernelSource::Reconstructed { n } }
    }

    pub fn with_signal_variance(mut self, s: f64) -> Self {
        self.signal_variance = s;
        self
    }
}

/// Unit-scale kernel Gram matrix between normalized inputs.
fn gram(params: &KernelParams, source: KernelSource, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    match source {
        KernelSource::Closed => {
            let mut k = DMatrix::zeros(a.len(), b.len());
            for (j, &xb) in b.iter().enumerate() {
                for (i, &xa) in a.iter().enumerate() {
                    k[(i, j)] = kernel_eval(params, xa, xb)?;
                }
            }
            Ok(k)
        }
        KernelSource::Reconstructed { n } => MercerBasis::new(*params, n)?.reconstruct_kernel(a, b),
    }
}

/// `∂K/∂θ` of the unit-scale Gram matrix on `x × x`.
fn gram_grad(params: &KernelParams, source: KernelSource, hyper: Hyper, x: &[f64]) -> Result<DMatrix<f64>> {
    match source {
        KernelSource::Closed => {
            let mut k = DMatrix::zeros(x.len(), x.len());
            for j in 0..x.len() {
                for i in 0..x.len() {
                    k[(i, j)] = kernel_grad(params, hyper, x[i], x[j])?;
                }
            }
            Ok(k)
        }
        KernelSource::Reconstructed { n } => {
            let basis = MercerBasis::new(*params, n)?;
            let phi = basis.basis_matrix(x)?.values;
            let dphi = basis.basis_matrix_grad(x, hyper)?.values;
            let lam = DMatrix::from_diagonal(basis.eigenvalues());
            let dlam = DMatrix::from_diagonal(&basis.lambda_grad(hyper)?);
            let cross = &dphi * &lam * phi.transpose();
            Ok(&cross + cross.transpose() + &phi * dlam * phi.transpose())
        }
    }
}

fn check_size(what: &'static str, size: usize, limit: usize) -> Result<()> {
    if size > limit {
        return Err(Error::SizeGuard { what, size, limit });
    }
    Ok(())
}

fn noise_diag(ds: &Dataset) -> Vec<f64> {
    match &ds.noise {
        NoiseVariance::Homoscedastic(v) => vec![*v; ds.len()],
        NoiseVariance::PerPoint(v) => v.clone(),
    }
}

/// A dense GP conditioned on its training data.
#[derive(Clone, Debug)]
pub struct ExactGp {
    spec: ExactSpec,
    transform: InputTransform,
    x: Vec<f64>,
    factor: SpdFactor,
    weights: DVector<f64>,
}

impl ExactGp {
    pub fn fit(ds: &Dataset, spec: ExactSpec) -> Result<Self> {
        Self::fit_with_limits(ds, spec, SizeLimits::default())
    }

    pub fn fit_with_limits(ds: &Dataset, spec: ExactSpec, limits: SizeLimits) -> Result<Self> {
        ds.validate()?;
        check_size("N", ds.len(), limits.max_n)?;
        let transform = InputTransform::fit(&ds.x)?;
        let x = transform.normalize_training(&ds.x);
        let mut k = gram(&spec.params, spec.source, &x, &x)? * spec.signal_variance;
        for (i, v) in noise_diag(ds).into_iter().enumerate() {
            k[(i, i)] += v;
        }
        let factor = SpdFactor::new(&k)?;
        let weights = factor.solve_vec(&DVector::from_column_slice(&ds.y));
        Ok(ExactGp { spec, transform, x, factor, weights })
    }

    pub fn transform(&self) -> InputTransform {
        self.transform
    }

    pub fn predict(&self, x_star: &[f64], mode: CovarianceMode) -> Result<Posterior> {
        let u = self.transform.normalize_prediction(self.spec.params.kind(), x_star)?;
        let s = self.spec.signal_variance;
        let ks = gram(&self.spec.params, self.spec.source, &u, &self.x)? * s;
        let mean = &ks * &self.weights;
        let (covariance, variance) = match mode {
            CovarianceMode::None => (None, None),
            _ => {
                let v = self.factor.solve(&ks.transpose());
                let prior = gram(&self.spec.params, self.spec.source, &u, &u)? * s;
                let mut cov = prior - &ks * v;
                symmetrize(&mut cov);
                let var = cov.diagonal();
                if mode == CovarianceMode::Full {
                    (Some(cov), Some(var))
                } else {
                    (None, Some(var))
                }
            }
        };
        Ok(Posterior { mean, covariance, variance, derivative_order: 0 })
    }
}

pub fn exact_fit(ds: &Dataset, spec: ExactSpec) -> Result<ExactGp> {
    ExactGp::fit(ds, spec)
}

pub fn exact_predict(model: &ExactGp, x_star: &[f64], mode: CovarianceMode) -> Result<Posterior> {
    model.predict(x_star, mode)
}

/// `½uᵀK̇u − ½tr(K⁻¹K̇)` with `u = K⁻¹y`.
fn grad_term(kinv: &DMatrix<f64>, u: &DVector<f64>, kdot: &DMatrix<f64>) -> f64 {
    0.5 * u.dot(&(kdot * u)) - 0.5 * kinv.component_mul(kdot).sum()
}

/// Dense LML and gradients for kernel hyperparameters, `SignalVariance`, and `NoiseVariance`.
pub fn exact_lml_and_grad(ds: &Dataset, spec: ExactSpec, hypers: &[Hyper]) -> Result<(f64, Vec<f64>)> {
    exact_lml_and_grad_with_limits(ds, spec, hypers, SizeLimits::default())
}

pub fn exact_lml_and_grad_with_limits(
    ds: &Dataset,
    spec: ExactSpec,
    hypers: &[Hyper],
    limits: SizeLimits,
) -> Result<(f64, Vec<f64>)> {
    let model = ExactGp::fit_with_limits(ds, spec, limits)?;
    let y = DVector::from_column_slice(&ds.y);
    let n = ds.len() as f64;
    let lml = -0.5 * y.dot(&model.weights) - 0.5 * model.factor.log_det() - 0.5 * n * (2.0 * PI).ln();
    if hypers.is_empty() {
        return Ok((lml, Vec::new()));
    }
    let kinv = model.factor.inverse();
    let u = &model.weights;
    let s = spec.signal_variance;
    let mut grads = Vec::with_capacity(hypers.len());
    for &h in hypers {
        let g = match h {
            Hyper::SignalVariance => grad_term(&kinv, u, &gram(&spec.params, spec.source, &model.x, &model.x)?),
            Hyper::NoiseVariance => {
                if ds.noise.homoscedastic().is_none() {
                    return Err(Error::UnknownParameter("noise_variance (per-point noise is not trainable)".into()));
                }
                0.5 * u.dot(u) - 0.5 * kinv.trace()
            }
            _ => {
                if !spec.params.kind().hyperparameters().contains(&h) {
                    return Err(Error::UnknownParameter(h.to_string()));
                }
                grad_term(&kinv, u, &(gram_grad(&spec.params, spec.source, h, &model.x)? * s))
            }
        };
        grads.push(g);
    }
    Ok((lml, grads))
}

/// Dense multi-output GP with covariance `K_f ⊗ K_XX + Σ` over the observed cells.
#[derive(Clone, Debug)]
pub struct ExactMoGp {
    params: KernelParams,
    source: KernelSource,
    kf: DMatrix<f64>,
    transform: InputTransform,
    x: Vec<f64>,
    observed_idx: Vec<usize>,
    factor: SpdFactor,
    weights: DVector<f64>,
    y_obs: DVector<f64>,
    n: usize,
}

fn mo_noise_dense(ds: &MODataset, idx: &[usize]) -> DMatrix<f64> {
    let n = ds.len();
    match &ds.noise {
        MONoise::Separable(s) => DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let (ka, ia) = (idx[a] / n, idx[a] % n);
            let (kb, ib) = (idx[b] / n, idx[b] % n);
            if ia == ib {
                s[(ka, kb)]
            } else {
                0.0
            }
        }),
        MONoise::Full(s) => s.select_rows(idx).select_columns(idx),
    }
}

/// `K_f[rows,cols] ⊗ K(a, b)` restricted to output-major indices.
fn mo_cross(kf: &DMatrix<f64>, k: &DMatrix<f64>, rows: &[usize], na: usize, cols: &[usize], nb: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (ka, ia) = (rows[r] / na, rows[r] % na);
        let (kb, ib) = (cols[c] / nb, cols[c] % nb);
        kf[(ka, kb)] * k[(ia, ib)]
    })
}

impl ExactMoGp {
    pub fn fit(ds: &MODataset, params: KernelParams, source: KernelSource, kf: &CoregionalizationMatrix) -> Result<Self> {
        Self::fit_with_limits(ds, params, source, kf, SizeLimits::default())
    }

    pub fn fit_with_limits(
        ds: &MODataset,
        params: KernelParams,
        source: KernelSource,
        kf: &CoregionalizationMatrix,
        limits: SizeLimits,
    ) -> Result<Self> {
        ds.validate()?;
        if kf.m() != ds.m {
            return Err(Error::Dimension("K_f does not match the output count".into()));
        }
        check_size("N*M", ds.len() * ds.m, limits.max_nm)?;
        let n = ds.len();
        let transform = InputTransform::fit(&ds.x)?;
        let x = transform.normalize_training(&ds.x);
        let idx: Vec<usize> = (0..n * ds.m).filter(|&i| ds.observed[i]).collect();
        let kxx = gram(&params, source, &x, &x)?;
        let kfm = kf.kf();
        let cov = mo_cross(&kfm, &kxx, &idx, n, &idx, n) + mo_noise_dense(ds, &idx);
        let factor = SpdFactor::new(&cov)?;
        let y_obs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| ds.y[i]));
        let weights = factor.solve_vec(&y_obs);
        Ok(ExactMoGp { params, source, kf: kfm, transform, x, observed_idx: idx, factor, weights, y_obs, n })
    }

    pub fn lml(&self) -> f64 {
        -0.5 * self.y_obs.dot(&self.weights)
            - 0.5 * self.factor.log_det()
            - 0.5 * self.observed_idx.len() as f64 * (2.0 * PI).ln()
    }

    /// Output-major posterior of `outputs` at `x_star`.
    pub fn predict(&self, x_star: &[f64], outputs: &[usize], mode: CovarianceMode) -> Result<Posterior> {
        if outputs.is_empty() {
            return Err(invalid("outputs", "at least one output must be requested"));
        }
        let m = self.kf.nrows();
        if outputs.iter().any(|&o| o >= m) {
            return Err(invalid("outputs", "output index out of range"));
        }
        let u = self.transform.normalize_prediction(self.params.kind(), x_star)?;
        let ms = u.len();
        let star: Vec<usize> = outputs.iter().flat_map(|&o| (0..ms).map(move |i| o * ms + i)).collect();
        let ks = mo_cross(&self.kf, &gram(&self.params, self.source, &u, &self.x)?, &star, ms, &self.observed_idx, self.n);
        let mean = &ks * &self.weights;
        let (covariance, variance) = match mode {
            CovarianceMode::None => (None, None),
            _ => {
                let prior = mo_cross(&self.kf, &gram(&self.params, self.source, &u, &u)?, &star, ms, &star, ms);
                let mut cov = prior - &ks * self.factor.solve(&ks.transpose());
                symmetrize(&mut cov);
                let var = cov.diagonal();
                if mode == CovarianceMode::Full {
                    (Some(cov), Some(var))
                } else {
                    (None, Some(var))
                }
            }
        };
        Ok(Posterior { mean, covariance, variance, derivative_order: 0 })
    }
}

/// Dense multi-output fit followed by prediction.
pub fn exact_mo_fit_predict(
    ds: &MODataset,
    params: KernelParams,
    source: KernelSource,
    kf: &CoregionalizationMatrix,
    x_star: &[f64],
    outputs: &[usize],
    mode: CovarianceMode,
) -> Result<Posterior> {
    ExactMoGp::fit(ds, params, source, kf)?.predict(x_star, outputs, mode)
}

/// Dense multi-output LML, kernel-hyperparameter gradients and `∂LML/∂L` (lower triangular).
pub fn exact_mo_lml_and_grads(
    ds: &MODataset,
    params: KernelParams,
    source: KernelSource,
    kf: &CoregionalizationMatrix,
    hypers: &[Hyper],
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    exact_mo_lml_and_grads_with_limits(ds, params, source, kf, hypers, SizeLimits::default())
}

pub fn exact_mo_lml_and_grads_with_limits(
    ds: &MODataset,
    params: KernelParams,
    source: KernelSource,
    kf: &CoregionalizationMatrix,
    hypers: &[Hyper],
    limits: SizeLimits,
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    let model = ExactMoGp::fit_with_limits(ds, params, source, kf, limits)?;
    let kinv = model.factor.inverse();
    let u = &model.weights;
    let idx = &model.observed_idx;
    let n = model.n;
    let kxx = gram(&params, source, &model.x, &model.x)?;
    let mut grads = Vec::with_capacity(hypers.len());
    for &h in hypers {
        if !params.kind().hyperparameters().contains(&h) {
            return Err(Error::UnknownParameter(h.to_string()));
        }
        let dk = gram_grad(&params, source, h, &model.x)?;
        grads.push(grad_term(&kinv, u, &mo_cross(&model.kf, &dk, idx, n, idx, n)));
    }
    let m = kf.m();
    let l = kf.l();
    let mut gl = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut e = DMatrix::zeros(m, m);
            e[(i, j)] = 1.0;
            let dkf = &e * l.transpose() + l * e.transpose();
            gl[(i, j)] = grad_term(&kinv, u, &mo_cross(&dkf, &kxx, idx, n, idx, n));
        }
    }
    Ok((model.lml(), grads, gl))
}
