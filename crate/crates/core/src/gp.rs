//! Single-output approximate GP regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{self, Core};
use crate::error::{invalid, Error, Result};
use crate::kernel::{Hyper, KernelKind, KernelParams};
use crate::mercer::MercerBasis;
use crate::stats::{accumulate, RawStats, StreamInput, Suff};
use crate::transform::InputTransform;

/// Observation noise: one shared variance or one variance per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseVariance {
    Homoscedastic(f64),
    PerPoint(Vec<f64>),
}

impl NoiseVariance {
    pub fn homoscedastic(&self) -> Option<f64> {
        match self {
            NoiseVariance::Homoscedastic(v) => Some(*v),
            NoiseVariance::PerPoint(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise: NoiseVariance,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, noise: NoiseVariance) -> Result<Self> {
        let ds = Dataset { x, y, noise };
        ds.validate()?;
        Ok(ds)
    }

    pub fn homoscedastic(x: Vec<f64>, y: Vec<f64>, noise_variance: f64) -> Result<Self> {
        Self::new(x, y, NoiseVariance::Homoscedastic(noise_variance))
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.x.len() != self.y.len() {
            return Err(Error::Dimension(format!("{} inputs but {} outputs", self.x.len(), self.y.len())));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        match &self.noise {
            NoiseVariance::Homoscedastic(v) => {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(invalid("noise_variance", "must be positive and finite"));
                }
            }
            NoiseVariance::PerPoint(v) => {
                if v.len() != self.x.len() {
                    return Err(Error::Dimension(format!("{} noise variances for {} samples", v.len(), self.x.len())));
                }
                if v.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(invalid("noise_variance", "every variance must be positive and finite"));
                }
            }
        }
        Ok(())
    }

    /// Same inputs and targets with a different shared noise variance.
    pub fn with_noise(&self, noise_variance: f64) -> Result<Self> {
        Self::homoscedastic(self.x.clone(), self.y.clone(), noise_variance)
    }
}

/// Kernel, truncation order and signal variance (the 1×1 `K_f`) of a single-output model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub params: KernelParams,
    pub n: usize,
    pub signal_variance: f64,
}

impl ModelSpec {
    pub fn new(params: KernelParams, n: usize) -> Self {
        ModelSpec { params, n, signal_variance: 1.0 }
    }

    pub fn with_signal_variance(mut self, s: f64) -> Self {
        self.signal_variance = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(invalid("signal_variance", "must be positive and finite"));
        }
        if self.n == 0 {
            return Err(invalid("n", "truncation order must be at least 1"));
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<MercerBasis> {
        self.validate()?;
        MercerBasis::new(self.params, self.n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    #[default]
    None,
    Diagonal,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    /// Full covariance (only in [`CovarianceMode::Full`]).
    pub covariance: Option<DMatrix<f64>>,
    /// Marginal variances (in both `Diagonal` and `Full` modes).
    pub variance: Option<DVector<f64>>,
    pub derivative_order: usize,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Compressed posterior: predictions need only `α′` and `G = Λ̄⁻¹`.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub(crate) basis: MercerBasis,
    pub(crate) transform: InputTransform,
    pub(crate) alpha_prime: DVector<f64>,
    pub(crate) g: DMatrix<f64>,
    pub(crate) noise: NoiseVariance,
    pub(crate) signal_variance: f64,
}

impl FittedModel {
    /// Reassembles a model from stored parts, rebuilding the basis from `spec`.
    pub fn from_parts(
        spec: ModelSpec,
        transform: InputTransform,
        alpha_prime: DVector<f64>,
        g: DMatrix<f64>,
        noise: NoiseVariance,
    ) -> Result<Self> {
        let basis = spec.basis()?;
        let r = basis.rank();
        if alpha_prime.len() != r || g.shape() != (r, r) {
            return Err(Error::Dimension(format!(
                "model stores {} weights and a {}x{} G for a basis of rank {r}",
                alpha_prime.len(),
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(FittedModel { basis, transform, alpha_prime, g, noise, signal_variance: spec.signal_variance })
    }

    pub fn basis(&self) -> &MercerBasis {
        &self.basis
    }

    pub fn transform(&self) -> InputTransform {
        self.transform
    }

    pub fn alpha_prime(&self) -> &DVector<f64> {
        &self.alpha_prime
    }

    /// Posterior weight covariance `G`; with this crate's convention it equals `Λ̄⁻¹`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn lambda_bar_inv(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn noise(&self) -> &NoiseVariance {
        &self.noise
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec { params: *self.basis.params(), n: self.basis.requested_order(), signal_variance: self.signal_variance }
    }

    pub fn predict(&self, x_star: &[f64], mode: CovarianceMode) -> Result<Posterior> {
        self.predict_order(x_star, 0, mode)
    }

    /// Posterior of the `k`-th input derivative, in raw input units.
    pub fn predict_derivative(&self, x_star: &[f64], k: usize, mode: CovarianceMode) -> Result<Posterior> {
        if k == 0 {
            return Err(invalid("k", "derivative order must be at least 1"));
        }
        if k > crate::mercer::MAX_DERIVATIVE_ORDER {
            return Err(invalid("k", format!("derivative order above {}", crate::mercer::MAX_DERIVATIVE_ORDER)));
        }
        self.predict_order(x_star, k, mode)
    }

    pub(crate) fn predict_order(&self, x_star: &[f64], k: usize, mode: CovarianceMode) -> Result<Posterior> {
        let u = self.transform.normalize_prediction(self.basis.kind(), x_star)?;
        let cols = self.basis.columns(&u, k);
        if cols.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { x: x_star.first().copied().unwrap_or(0.0) });
        }
        let factor = self.transform.chain_factor(k);
        let (mean, covariance, variance) = project(&cols, &self.alpha_prime, &self.g, factor, mode);
        Ok(Posterior { mean, covariance, variance, derivative_order: k })
    }
}

/// Mean `Φα`, and covariance `Φ G Φᵀ` as requested, from `rank × m` basis columns.
pub(crate) fn project(
    cols: &DMatrix<f64>,
    alpha: &DVector<f64>,
    g: &DMatrix<f64>,
    factor: f64,
    mode: CovarianceMode,
) -> (DVector<f64>, Option<DMatrix<f64>>, Option<DVector<f64>>) {
    let mean = cols.tr_mul(alpha) * factor;
    let f2 = factor * factor;
    match mode {
        CovarianceMode::None => (mean, None, None),
        CovarianceMode::Diagonal => {
            let gc = g * cols;
            let var = DVector::from_iterator(cols.ncols(), (0..cols.ncols()).map(|j| cols.column(j).dot(&gc.column(j)) * f2));
            (mean, None, Some(var))
        }
        CovarianceMode::Full => {
            let gc = g * cols;
            let mut cov = cols.transpose() * &gc * f2;
            crate::linalg::symmetrize(&mut cov);
            let var = cov.diagonal();
            (mean, Some(cov), Some(var))
        }
    }
}

pub(crate) struct Prepared {
    pub basis: MercerBasis,
    pub transform: InputTransform,
    pub x: Vec<f64>,
}

pub(crate) fn prepare(ds: &Dataset, spec: &ModelSpec) -> Result<Prepared> {
    ds.validate()?;
    let basis = spec.basis()?;
    let transform = InputTransform::fit(&ds.x)?;
    let x = transform.normalize_training(&ds.x);
    Ok(Prepared { basis, transform, x })
}

fn noise_weights(ds: &Dataset) -> (DMatrix<f64>, Option<Vec<f64>>) {
    match &ds.noise {
        NoiseVariance::Homoscedastic(v) => (DMatrix::from_element(1, 1, *v), None),
        NoiseVariance::PerPoint(v) => (DMatrix::from_element(1, 1, 1.0), Some(v.iter().map(|s| 1.0 / s).collect())),
    }
}

fn stream(prep: &Prepared, ds: &Dataset, slots: &[usize], hypers: &[Hyper]) -> Result<RawStats> {
    let (_, nu) = noise_weights(ds);
    let input = StreamInput { x: &prep.x, y: &ds.y, m: 1, observed: None, nu: nu.as_deref() };
    accumulate(&prep.basis, slots, &input, hypers)
}

fn prior_l(spec: &ModelSpec) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, spec.signal_variance.sqrt())
}

/// Fits the reduced posterior; `Φ_X` is streamed in chunks and never held in full.
pub fn fit(ds: &Dataset, spec: &ModelSpec) -> Result<FittedModel> {
    let prep = prepare(ds, spec)?;
    let raw = stream(&prep, ds, prep.basis.slots(), &[])?;
    let sel: Vec<usize> = (0..prep.basis.rank()).collect();
    let (s, _) = noise_weights(ds);
    let suff = raw.suff(&s, &sel, false)?;
    let core = engine::solve(&prior_l(spec), prep.basis.eigenvalues(), &suff)?;
    Ok(FittedModel {
        basis: prep.basis,
        transform: prep.transform,
        alpha_prime: core.alpha,
        g: core.g,
        noise: ds.noise.clone(),
        signal_variance: spec.signal_variance,
    })
}

pub fn log_marginal_likelihood(ds: &Dataset, spec: &ModelSpec) -> Result<f64> {
    Ok(lml_and_grads(ds, spec, &[])?.0)
}

pub fn lml_grad_general(ds: &Dataset, spec: &ModelSpec, hyper: Hyper) -> Result<f64> {
    Ok(lml_and_grads(ds, spec, &[hyper])?.1[0])
}

fn check_hypers(kind: KernelKind, hypers: &[Hyper], noise: &NoiseVariance) -> Result<()> {
    for &h in hypers {
        match h {
            Hyper::SignalVariance => {}
            Hyper::NoiseVariance => {
                if noise.homoscedastic().is_none() {
                    return Err(Error::UnknownParameter("noise_variance (per-point noise is not trainable)".into()));
                }
            }
            _ if kind.hyperparameters().contains(&h) => {}
            _ => return Err(Error::UnknownParameter(h.to_string())),
        }
    }
    Ok(())
}

/// LML and its gradient for each hyper, recomputing `Φ_X` (and `∂Φ_X/∂θ` where needed).
pub fn lml_and_grads(ds: &Dataset, spec: &ModelSpec, hypers: &[Hyper]) -> Result<(f64, Vec<f64>)> {
    let prep = prepare(ds, spec)?;
    check_hypers(spec.params.kind(), hypers, &ds.noise)?;
    let kind = spec.params.kind();
    let phi_hypers: Vec<Hyper> =
        hypers.iter().copied().filter(|&h| h.is_kernel() && !kind.is_eigenvalue_only(h)).collect();
    let raw = stream(&prep, ds, prep.basis.slots(), &phi_hypers)?;
    let sel: Vec<usize> = (0..prep.basis.rank()).collect();
    let (s, _) = noise_weights(ds);
    let suff = raw.suff(&s, &sel, hypers.contains(&Hyper::NoiseVariance))?;
    let core = engine::solve(&prior_l(spec), prep.basis.eigenvalues(), &suff)?;
    let grads = gradients(&core, &suff, &prep.basis, hypers)?;
    Ok((core.lml(&suff), grads))
}

pub(crate) fn gradients(core: &Core, suff: &Suff, basis: &MercerBasis, hypers: &[Hyper]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(hypers.len());
    let mut gamma = None;
    for &h in hypers {
        let g = match h {
            Hyper::SignalVariance => {
                let gm = gamma.get_or_insert_with(|| core.grad_kf());
                gm[(0, 0)]
            }
            Hyper::NoiseVariance => {
                let raw = suff.noise_raw.as_ref().ok_or_else(|| Error::UnknownParameter(h.to_string()))?;
                core.grad_noise(raw)[0]
            }
            _ => kernel_gradient(core, suff, basis, h)?,
        };
        out.push(g);
    }
    Ok(out)
}

pub(crate) fn kernel_gradient(core: &Core, suff: &Suff, basis: &MercerBasis, h: Hyper) -> Result<f64> {
    let dl = basis.lambda_grad(h)?;
    let ratio = dl.component_div(basis.eigenvalues());
    let mut g = core.grad_eigen(&ratio);
    if !basis.kind().is_eigenvalue_only(h) {
        let (_, c, d) = suff
            .phi_grads
            .iter()
            .find(|(hh, _, _)| *hh == h)
            .ok_or_else(|| Error::UnknownParameter(h.to_string()))?;
        g += core.grad_phi(c, d);
    }
    Ok(g)
}

/// Cached `ΦᵀΦ`, `ΦᵀY`, `YᵀY` for training eigenvalue-only hyperparameters without
/// touching the data again.
#[derive(Clone, Debug)]
pub struct FastStats {
    raw: RawStats,
    reference: KernelParams,
    n: usize,
    transform: InputTransform,
    noise: NoiseVariance,
}

impl FastStats {
    pub fn new(ds: &Dataset, spec: &ModelSpec) -> Result<Self> {
        let prep = prepare(ds, spec)?;
        let slots = prep.basis.all_slots();
        let raw = stream(&prep, ds, &slots, &[])?;
        Ok(FastStats { raw, reference: spec.params, n: spec.n, transform: prep.transform, noise: ds.noise.clone() })
    }

    pub fn transform(&self) -> InputTransform {
        self.transform
    }

    pub fn sample_count(&self) -> usize {
        self.raw.patterns.iter().map(|p| p.count).sum()
    }

    fn check_compatible(&self, spec: &ModelSpec) -> Result<()> {
        if spec.n != self.n || spec.params.kind() != self.reference.kind() {
            return Err(Error::Dimension("model differs from the one the statistics were built for".into()));
        }
        let kind = spec.params.kind();
        for &h in kind.hyperparameters() {
            if !kind.is_eigenvalue_only(h) && spec.params.get(h)? != self.reference.get(h)? {
                return Err(Error::NotEigenvalueOnly(h.to_string()));
            }
        }
        if let (KernelParams::SquaredExponential { alpha: a, .. }, KernelParams::SquaredExponential { alpha: b, .. }) =
            (spec.params, self.reference)
        {
            if a != b {
                return Err(Error::NotEigenvalueOnly("alpha_se".into()));
            }
        }
        Ok(())
    }

    fn solve(&self, spec: &ModelSpec, noise: Option<f64>, want_noise: bool) -> Result<(MercerBasis, Suff, Core)> {
        spec.validate()?;
        self.check_compatible(spec)?;
        let basis = MercerBasis::new(spec.params, spec.n)?;
        let sel = self.raw.selection(&basis)?;
        let s = match (&self.noise, noise) {
            (NoiseVariance::Homoscedastic(v), None) => *v,
            (NoiseVariance::Homoscedastic(_), Some(v)) => {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(invalid("noise_variance", "must be positive and finite"));
                }
                v
            }
            (NoiseVariance::PerPoint(_), None) => 1.0,
            (NoiseVariance::PerPoint(_), Some(_)) => {
                return Err(Error::UnknownParameter("noise_variance (per-point noise is not trainable)".into()))
            }
        };
        let suff = self.raw.suff(&DMatrix::from_element(1, 1, s), &sel, want_noise)?;
        let core = engine::solve(&prior_l(spec), basis.eigenvalues(), &suff)?;
        Ok((basis, suff, core))
    }

    /// LML and gradients for eigenvalue-only hyperparameters; `noise` overrides a shared noise variance.
    pub fn evaluate(&self, spec: &ModelSpec, noise: Option<f64>, hypers: &[Hyper]) -> Result<(f64, Vec<f64>)> {
        let kind = spec.params.kind();
        for &h in hypers {
            if !kind.is_eigenvalue_only(h) {
                return Err(Error::NotEigenvalueOnly(h.to_string()));
            }
        }
        check_hypers(kind, hypers, &self.noise)?;
        let (basis, suff, core) = self.solve(spec, noise, hypers.contains(&Hyper::NoiseVariance))?;
        let grads = gradients(&core, &suff, &basis, hypers)?;
        Ok((core.lml(&suff), grads))
    }

    pub fn lml(&self, spec: &ModelSpec, noise: Option<f64>) -> Result<f64> {
        Ok(self.evaluate(spec, noise, &[])?.0)
    }

    pub fn lml_grad_fast(&self, spec: &ModelSpec, hyper: Hyper) -> Result<f64> {
        Ok(self.evaluate(spec, None, &[hyper])?.1[0])
    }

    /// Builds the fitted model from the cached statistics.
    pub fn fit(&self, spec: &ModelSpec, noise: Option<f64>) -> Result<FittedModel> {
        let (basis, _, core) = self.solve(spec, noise, false)?;
        let noise = match (&self.noise, noise) {
            (NoiseVariance::Homoscedastic(_), Some(v)) => NoiseVariance::Homoscedastic(v),
            (n, _) => n.clone(),
        };
        Ok(FittedModel {
            basis,
            transform: self.transform,
            alpha_prime: core.alpha,
            g: core.g,
            noise,
            signal_variance: spec.signal_variance,
        })
    }
}

/// `lml_grad_fast` as a free function over prebuilt statistics.
pub fn lml_grad_fast(cached: &FastStats, spec: &ModelSpec, hyper: Hyper) -> Result<f64> {
    cached.lml_grad_fast(spec, hyper)
}
