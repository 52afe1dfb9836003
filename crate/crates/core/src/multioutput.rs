//! Multi-output models with covariance `K_f ⊗ (Φ Λ Φᵀ) + Σ`.
//!
//! Outputs are vectorized output-major: entry `k·N + i` is output `k` at sample `i`.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::engine::{self, Core};
use crate::error::{invalid, Error, Result};
use crate::gp::{project, CovarianceMode, Posterior};
use crate::kernel::{Hyper, KernelParams};
use crate::linalg::{kron_apply, lower_triangular_inverse, sym_sqrt, SpdFactor};
use crate::mercer::MercerBasis;
use crate::stats::{accumulate, RawStats, StreamInput, Suff};
use crate::transform::InputTransform;

/// Dense multi-output problems above this `N·M` are refused by the full-noise path.
pub const FULL_NOISE_MAX_NM: usize = 6000;

/// `K_f = L Lᵀ` stored through its lower-triangular factor `L` (positive diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct CoregionalizationMatrix {
    l: DMatrix<f64>,
}

impl CoregionalizationMatrix {
    pub fn from_cholesky(l: DMatrix<f64>) -> Result<Self> {
        let m = l.nrows();
        if m == 0 || l.ncols() != m {
            return Err(Error::Dimension(format!("L must be square and non-empty, got {}x{}", m, l.ncols())));
        }
        for j in 0..m {
            if !(l[(j, j)] > 0.0) || !l[(j, j)].is_finite() {
                return Err(invalid("L", "diagonal entries must be positive and finite"));
            }
            for i in 0..m {
                if i < j && l[(i, j)] != 0.0 {
                    return Err(invalid("L", "must be lower triangular"));
                }
                if !l[(i, j)].is_finite() {
                    return Err(invalid("L", "entries must be finite"));
                }
            }
        }
        Ok(CoregionalizationMatrix { l })
    }

    pub fn from_kf(kf: &DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(kf.clone()).ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
        Self::from_cholesky(chol.l())
    }

    pub fn identity(m: usize) -> Self {
        CoregionalizationMatrix { l: DMatrix::identity(m, m) }
    }

    pub fn m(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn kf(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// `K_f[0,1] / sqrt(K_f[0,0] K_f[1,1])` style normalized correlation between two outputs.
    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        let k = self.kf();
        k[(a, b)] / (k[(a, a)] * k[(b, b)]).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MONoise {
    /// Per-sample `M×M` covariance, i.e. total noise `S ⊗ I_N`.
    Separable(DMatrix<f64>),
    /// Full `NM×NM` covariance in output-major order.
    Full(DMatrix<f64>),
}

impl MONoise {
    /// Separable diagonal noise with one variance per output.
    pub fn per_output(variances: &[f64]) -> Self {
        MONoise::Separable(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MODataset {
    pub x: Vec<f64>,
    /// Output-major targets (`k·N + i`); entries of unobserved cells are ignored.
    pub y: Vec<f64>,
    pub observed: Vec<bool>,
    pub m: usize,
    pub noise: MONoise,
}

impl MODataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, m: usize, observed: Option<Vec<bool>>, noise: MONoise) -> Result<Self> {
        let observed = observed.unwrap_or_else(|| vec![true; y.len()]);
        let ds = MODataset { x, y, observed, m, noise };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds from one column per output; `None` marks a missing value.
    pub fn from_columns(x: Vec<f64>, columns: &[Vec<Option<f64>>], noise: MONoise) -> Result<Self> {
        let n = x.len();
        let m = columns.len();
        let mut y = Vec::with_capacity(n * m);
        let mut observed = Vec::with_capacity(n * m);
        for col in columns {
            if col.len() != n {
                return Err(Error::Dimension(format!("output column has {} rows, expected {n}", col.len())));
            }
            for v in col {
                y.push(v.unwrap_or(0.0));
                observed.push(v.is_some());
            }
        }
        Self::new(x, y, m, Some(observed), noise)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn value(&self, k: usize, i: usize) -> Option<f64> {
        let idx = k * self.len() + i;
        self.observed[idx].then(|| self.y[idx])
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if n == 0 || self.m == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.y.len() != n * self.m || self.observed.len() != n * self.m {
            return Err(Error::Dimension(format!("expected {} output entries for N={n}, M={}", n * self.m, self.m)));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inputs".into()));
        }
        if self.y.iter().zip(&self.observed).any(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::NonFinite("outputs".into()));
        }
        if self.observed_count() == 0 {
            return Err(Error::EmptyDataset);
        }
        let ok = match &self.noise {
            MONoise::Separable(s) => s.shape() == (self.m, self.m),
            MONoise::Full(s) => {
                if n * self.m > FULL_NOISE_MAX_NM {
                    return Err(Error::SizeGuard { what: "N*M", size: n * self.m, limit: FULL_NOISE_MAX_NM });
                }
                s.shape() == (n * self.m, n * self.m)
            }
        };
        if !ok {
            return Err(Error::Dimension("noise covariance does not match the output count".into()));
        }
        let (s, dense_check) = match &self.noise {
            MONoise::Separable(s) => (s, true),
            MONoise::Full(s) => (s, false),
        };
        let asymmetric = (s - s.transpose()).abs().max() > 1e-12 * s.abs().max();
        let bad_diag = s.diagonal().iter().any(|&v| !(v > 0.0) || !v.is_finite());
        if asymmetric || bad_diag || (dense_check && SpdFactor::new(s).is_err()) {
            return Err(invalid("noise", "covariance must be symmetric positive definite"));
        }
        Ok(())
    }

    /// Keeps the samples at `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let n = self.len();
        let x: Vec<f64> = indices.iter().map(|&i| self.x[i]).collect();
        let mut y = Vec::with_capacity(indices.len() * self.m);
        let mut observed = Vec::with_capacity(indices.len() * self.m);
        for k in 0..self.m {
            for &i in indices {
                y.push(self.y[k * n + i]);
                observed.push(self.observed[k * n + i]);
            }
        }
        let noise = match &self.noise {
            MONoise::Separable(s) => MONoise::Separable(s.clone()),
            MONoise::Full(s) => {
                let idx: Vec<usize> = (0..self.m).flat_map(|k| indices.iter().map(move |&i| k * n + i)).collect();
                MONoise::Full(s.select_rows(&idx).select_columns(&idx))
            }
        };
        MODataset::new(x, y, self.m, Some(observed), noise)
    }

    /// Marks output `k` missing wherever `drop(x)` holds.
    pub fn mask_output(&self, k: usize, drop: impl Fn(f64) -> bool) -> Result<Self> {
        let n = self.len();
        let mut out = self.clone();
        for i in 0..n {
            if drop(self.x[i]) {
                out.observed[k * n + i] = false;
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn with_noise(&self, noise: MONoise) -> Result<Self> {
        let mut out = self.clone();
        out.noise = noise;
        out.validate()?;
        Ok(out)
    }

    fn fully_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }
}

/// Permutation matrix `T` with `T vec(A) = vec(Aᵀ)` for `M×M` matrices `A`.
pub fn commutation_matrix(m: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(m * m, m * m);
    for i in 0..m {
        for j in 0..m {
            // vec(Aᵀ)[j*m + i] = A[j, i], which sits at i*m + j in vec(A).
            t[(j * m + i, i * m + j)] = 1.0;
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct MOFittedModel {
    pub(crate) basis: MercerBasis,
    pub(crate) transform: InputTransform,
    pub(crate) kf: CoregionalizationMatrix,
    pub(crate) alpha_prime: DVector<f64>,
    pub(crate) g: DMatrix<f64>,
    pub(crate) noise: MONoise,
}

impl MOFittedModel {
    pub fn from_parts(
        params: KernelParams,
        n: usize,
        transform: InputTransform,
        kf: CoregionalizationMatrix,
        alpha_prime: DVector<f64>,
        g: DMatrix<f64>,
        noise: MONoise,
    ) -> Result<Self> {
        let basis = MercerBasis::new(params, n)?;
        let d = basis.rank() * kf.m();
        if alpha_prime.len() != d || g.shape() != (d, d) {
            return Err(Error::Dimension(format!("stored weights do not match rank {} times {} outputs", basis.rank(), kf.m())));
        }
        Ok(MOFittedModel { basis, transform, kf, alpha_prime, g, noise })
    }

    pub fn basis(&self) -> &MercerBasis {
        &self.basis
    }

    pub fn transform(&self) -> InputTransform {
        self.transform
    }

    pub fn kf(&self) -> &CoregionalizationMatrix {
        &self.kf
    }

    pub fn alpha_prime(&self) -> &DVector<f64> {
        &self.alpha_prime
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn noise(&self) -> &MONoise {
        &self.noise
    }

    pub fn outputs(&self) -> usize {
        self.kf.m()
    }

    /// Output-major posterior over the requested outputs at `x_star`.
    pub fn predict(&self, x_star: &[f64], outputs: &[usize], mode: CovarianceMode) -> Result<Posterior> {
        self.predict_order(x_star, outputs, 0, mode)
    }

    pub fn predict_derivative(&self, x_star: &[f64], outputs: &[usize], k: usize, mode: CovarianceMode) -> Result<Posterior> {
        if k == 0 {
            return Err(invalid("k", "derivative order must be at least 1"));
        }
        self.predict_order(x_star, outputs, k, mode)
    }

    fn predict_order(&self, x_star: &[f64], outputs: &[usize], k: usize, mode: CovarianceMode) -> Result<Posterior> {
        if outputs.is_empty() {
            return Err(invalid("outputs", "at least one output must be requested"));
        }
        if let Some(&bad) = outputs.iter().find(|&&o| o >= self.outputs()) {
            return Err(invalid("outputs", format!("output index {bad} out of range for {} outputs", self.outputs())));
        }
        let u = self.transform.normalize_prediction(self.basis.kind(), x_star)?;
        let cols = self.basis.columns(&u, k);
        let r = self.basis.rank();
        let ms = x_star.len();
        // Block-diagonal I ⊗ Φ* applied to the selected output blocks.
        let d = outputs.len() * r;
        let mut big = DMatrix::zeros(d, outputs.len() * ms);
        for (b, _) in outputs.iter().enumerate() {
            big.view_mut((b * r, b * ms), (r, ms)).copy_from(&cols);
        }
        let idx: Vec<usize> = outputs.iter().flat_map(|&o| (0..r).map(move |i| o * r + i)).collect();
        let alpha = self.alpha_prime.select_rows(&idx);
        let g = self.g.select_rows(&idx).select_columns(&idx);
        let (mean, covariance, variance) = project(&big, &alpha, &g, self.transform.chain_factor(k), mode);
        Ok(Posterior { mean, covariance, variance, derivative_order: k })
    }
}

/// Factored `(K_f⁻¹ ⊗ Λ⁻¹ + S⁻¹ ⊗ ΦᵀΦ)⁻¹ = (P ⊗ Q_b) diag(d_a / (1 + d_a d_b)) (P ⊗ Q_b)ᵀ`.
///
/// `P = S^{1/2} V_a` with `S^{-1/2} K_f S^{-1/2} = V_a D_a V_aᵀ`, and `Q_b = Λ^{1/2} V_b` with
/// `Λ^{1/2} ΦᵀΦ Λ^{1/2} = V_b D_b V_bᵀ`.
#[derive(Clone, Debug)]
pub struct SeparableInverse {
    pub p: DMatrix<f64>,
    pub qb: DMatrix<f64>,
    pub da: DVector<f64>,
    pub db: DVector<f64>,
}

impl SeparableInverse {
    pub fn from_gram(s: &DMatrix<f64>, kf: &DMatrix<f64>, gram: &DMatrix<f64>, lambda: &DVector<f64>) -> Result<Self> {
        let (s_half, s_inv_half) = sym_sqrt(s)?;
        let ka = &s_inv_half * kf * &s_inv_half;
        let ea = SymmetricEigen::try_new(0.5 * (&ka + ka.transpose()), 1e-14, 10_000)
            .ok_or_else(|| Error::NonFinite("eigendecomposition of the output covariance".into()))?;
        let sl = lambda.map(f64::sqrt);
        let kb = crate::linalg::scale_sym(gram, &sl);
        let eb = SymmetricEigen::try_new(0.5 * (&kb + kb.transpose()), 1e-14, 10_000)
            .ok_or_else(|| Error::NonFinite("eigendecomposition of the basis Gram matrix".into()))?;
        let p = s_half * ea.eigenvectors;
        let qb = DMatrix::from_diagonal(&sl) * eb.eigenvectors;
        Ok(SeparableInverse { p, qb, da: ea.eigenvalues.map(|v| v.max(0.0)), db: eb.eigenvalues.map(|v| v.max(0.0)) })
    }

    /// `D_a ⊗ D_b + I` as a vector (Kronecker order: output index slow).
    pub fn middle_factor(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.da.len() * self.db.len(),
            self.da.iter().flat_map(|&a| self.db.iter().map(move |&b| 1.0 + a * b)),
        )
    }

    fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.da.len() * self.db.len(),
            self.da.iter().flat_map(|&a| self.db.iter().map(move |&b| a / (1.0 + a * b))),
        )
    }

    /// `log|I + QᵀHQ|`.
    pub fn log_det(&self) -> f64 {
        self.middle_factor().iter().map(|v| v.ln()).sum()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let t = kron_apply(&self.p.transpose(), &self.qb.transpose(), v);
        let t = t.component_mul(&self.weights());
        kron_apply(&self.p, &self.qb, &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let u = self.p.kronecker(&self.qb);
        let mut scaled = u.clone();
        for (mut col, w) in scaled.column_iter_mut().zip(self.weights().iter()) {
            col *= *w;
        }
        let mut out = scaled * u.transpose();
        crate::linalg::symmetrize(&mut out);
        out
    }

    /// `U_a = P⁻ᵀ`, the eigenvectors of `S⁻¹ K_f`.
    pub fn u_a(&self) -> DMatrix<f64> {
        self.p.clone().try_inverse().map(|m| m.transpose()).unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    /// `U_b = Q_b⁻ᵀ`, the eigenvectors of `ΦᵀΦΛ`.
    pub fn u_b(&self) -> DMatrix<f64> {
        self.qb.clone().try_inverse().map(|m| m.transpose()).unwrap_or_else(|| DMatrix::zeros(0, 0))
    }
}

/// Separable-noise inverse from the basis matrix `Φ` (`N×n`).
pub fn mo_inverse_separable(
    s: &DMatrix<f64>,
    kf: &CoregionalizationMatrix,
    phi: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<SeparableInverse> {
    SeparableInverse::from_gram(s, &kf.kf(), &(phi.transpose() * phi), lambda)
}

pub(crate) struct MoPrepared {
    pub basis: MercerBasis,
    pub transform: InputTransform,
    pub x: Vec<f64>,
}

pub(crate) fn mo_prepare(ds: &MODataset, params: &KernelParams, n: usize, kf: &CoregionalizationMatrix) -> Result<MoPrepared> {
    ds.validate()?;
    if kf.m() != ds.m {
        return Err(Error::Dimension(format!("K_f is {0}x{0} for {1} outputs", kf.m(), ds.m)));
    }
    let basis = MercerBasis::new(*params, n)?;
    let transform = InputTransform::fit(&ds.x)?;
    let x = transform.normalize_training(&ds.x);
    Ok(MoPrepared { basis, transform, x })
}

pub(crate) fn mo_raw(prep: &MoPrepared, ds: &MODataset, slots: &[usize], hypers: &[Hyper]) -> Result<RawStats> {
    let observed = (!ds.fully_observed()).then_some(ds.observed.as_slice());
    let input = StreamInput { x: &prep.x, y: &ds.y, m: ds.m, observed, nu: None };
    accumulate(&prep.basis, slots, &input, hypers)
}

/// Statistics for an arbitrary dense noise covariance over the observed cells.
fn full_noise_suff(prep: &MoPrepared, ds: &MODataset, sigma: &DMatrix<f64>, hypers: &[Hyper]) -> Result<Suff> {
    let n = ds.len();
    let m = ds.m;
    let r = prep.basis.rank();
    let idx: Vec<usize> = (0..n * m).filter(|&i| ds.observed[i]).collect();
    let f = SpdFactor::new(&sigma.select_rows(&idx).select_columns(&idx))?;
    let linv = lower_triangular_inverse(&f.l());
    let cols = prep.basis.columns(&prep.x, 0);
    let design = |c: &DMatrix<f64>| {
        let mut omega = DMatrix::zeros(idx.len(), r * m);
        for (row, &g) in idx.iter().enumerate() {
            let (k, i) = (g / n, g % n);
            for s in 0..r {
                omega[(row, k * r + s)] = c[(s, i)];
            }
        }
        &linv * omega
    };
    let z = design(&cols);
    let yo = DVector::from_iterator(idx.len(), idx.iter().map(|&g| ds.y[g]));
    let zy = &linv * yo;
    let mut phi_grads = Vec::new();
    for &h in hypers {
        let zd = design(&prep.basis.grad_columns(&prep.x, h)?);
        phi_grads.push((h, z.transpose() * &zd, zd.tr_mul(&zy)));
    }
    Ok(Suff {
        m,
        rank: r,
        h: z.transpose() * &z,
        c: z.tr_mul(&zy),
        yy: zy.dot(&zy),
        log_det_noise: f.log_det(),
        n_obs: idx.len(),
        phi_grads,
        noise_raw: None,
    })
}

pub(crate) fn mo_suff(prep: &MoPrepared, ds: &MODataset, hypers: &[Hyper], want_noise: bool) -> Result<Suff> {
    match &ds.noise {
        MONoise::Full(sigma) => full_noise_suff(prep, ds, sigma, hypers),
        MONoise::Separable(s) => {
            let raw = mo_raw(prep, ds, prep.basis.slots(), hypers)?;
            let sel: Vec<usize> = (0..prep.basis.rank()).collect();
            raw.suff(s, &sel, want_noise)
        }
    }
}

pub fn mo_fit(ds: &MODataset, params: &KernelParams, n: usize, kf: &CoregionalizationMatrix) -> Result<MOFittedModel> {
    let prep = mo_prepare(ds, params, n, kf)?;
    let (alpha, g) = match &ds.noise {
        MONoise::Separable(s) if ds.fully_observed() => {
            let raw = mo_raw(&prep, ds, prep.basis.slots(), &[])?;
            let sel: Vec<usize> = (0..prep.basis.rank()).collect();
            let suff = raw.suff(s, &sel, false)?;
            match SeparableInverse::from_gram(s, &kf.kf(), &raw.patterns[0].a, prep.basis.eigenvalues()) {
                Ok(inv) => (inv.apply(&suff.c), inv.to_dense()),
                Err(e) => {
                    warn!("separable inverse failed ({e}); falling back to the direct solve");
                    let core = engine::solve(kf.l(), prep.basis.eigenvalues(), &suff)?;
                    (core.alpha, core.g)
                }
            }
        }
        _ => {
            let suff = mo_suff(&prep, ds, &[], false)?;
            let core = engine::solve(kf.l(), prep.basis.eigenvalues(), &suff)?;
            (core.alpha, core.g)
        }
    };
    Ok(MOFittedModel { basis: prep.basis, transform: prep.transform, kf: kf.clone(), alpha_prime: alpha, g, noise: ds.noise.clone() })
}

/// Output-major posterior from a fitted multi-output model.
pub fn mo_predict(model: &MOFittedModel, x_star: &[f64], outputs: &[usize], mode: CovarianceMode) -> Result<Posterior> {
    model.predict(x_star, outputs, mode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MOGradients {
    pub lml: f64,
    /// One entry per requested kernel hyperparameter.
    pub kernel: Vec<f64>,
    /// `∂LML/∂L`, lower triangular.
    pub l: DMatrix<f64>,
    /// `∂LML/∂K_f` with entries treated as independent.
    pub kf: DMatrix<f64>,
    /// Per-output noise-variance gradients (empty unless requested).
    pub noise: Vec<f64>,
}

pub(crate) fn mo_gradients(core: &Core, suff: &Suff, basis: &MercerBasis, hypers: &[Hyper], want_noise: bool) -> Result<MOGradients> {
    let kernel = hypers
        .iter()
        .map(|&h| crate::gp::kernel_gradient(core, suff, basis, h))
        .collect::<Result<Vec<_>>>()?;
    let gamma = core.grad_kf();
    let l = engine::grad_l_from_kf(&gamma, &core.l);
    let noise = if want_noise {
        let raw = suff
            .noise_raw
            .as_ref()
            .ok_or_else(|| Error::UnknownParameter("noise_variance (only diagonal separable noise is trainable)".into()))?;
        core.grad_noise(raw)
    } else {
        Vec::new()
    };
    Ok(MOGradients { lml: core.lml(suff), kernel, l, kf: gamma, noise })
}

fn check_kernel_hypers(params: &KernelParams, hypers: &[Hyper]) -> Result<()> {
    for h in hypers {
        if !params.kind().hyperparameters().contains(h) {
            return Err(Error::UnknownParameter(h.to_string()));
        }
    }
    Ok(())
}

/// Multi-output LML with gradients for kernel hyperparameters, `L`, and optionally the noise.
pub fn mo_lml_and_grads(
    ds: &MODataset,
    params: &KernelParams,
    n: usize,
    kf: &CoregionalizationMatrix,
    hypers: &[Hyper],
    want_noise: bool,
) -> Result<MOGradients> {
    check_kernel_hypers(params, hypers)?;
    let prep = mo_prepare(ds, params, n, kf)?;
    let phi_hypers: Vec<Hyper> = hypers.iter().copied().filter(|&h| !params.kind().is_eigenvalue_only(h)).collect();
    let suff = mo_suff(&prep, ds, &phi_hypers, want_noise)?;
    let core = engine::solve(kf.l(), prep.basis.eigenvalues(), &suff)?;
    mo_gradients(&core, &suff, &prep.basis, hypers, want_noise)
}

pub fn mo_log_marginal_likelihood(ds: &MODataset, params: &KernelParams, n: usize, kf: &CoregionalizationMatrix) -> Result<f64> {
    Ok(mo_lml_and_grads(ds, params, n, kf, &[], false)?.lml)
}

/// `∂LML/∂L_ij` for `i ≥ j`.
pub fn kf_grad(ds: &MODataset, params: &KernelParams, n: usize, kf: &CoregionalizationMatrix) -> Result<DMatrix<f64>> {
    Ok(mo_lml_and_grads(ds, params, n, kf, &[], false)?.l)
}

/// Cached statistics for multi-output training where `Φ_X` stays fixed.
#[derive(Clone, Debug)]
pub struct MOFastStats {
    raw: RawStats,
    reference: KernelParams,
    n: usize,
    transform: InputTransform,
}

impl MOFastStats {
    pub fn new(ds: &MODataset, params: &KernelParams, n: usize) -> Result<Self> {
        if matches!(ds.noise, MONoise::Full(_)) {
            return Err(invalid("noise", "cached multi-output statistics need separable noise"));
        }
        let prep = mo_prepare(ds, params, n, &CoregionalizationMatrix::identity(ds.m))?;
        let slots = prep.basis.all_slots();
        let raw = mo_raw(&prep, ds, &slots, &[])?;
        Ok(MOFastStats { raw, reference: *params, n, transform: prep.transform })
    }

    pub fn transform(&self) -> InputTransform {
        self.transform
    }

    /// LML and gradients for eigenvalue-only kernel hyperparameters, `L`, and optionally the noise.
    pub fn evaluate(
        &self,
        params: &KernelParams,
        kf: &CoregionalizationMatrix,
        s: &DMatrix<f64>,
        hypers: &[Hyper],
        want_noise: bool,
    ) -> Result<MOGradients> {
        Ok(self.evaluate_core(params, kf, s, hypers, want_noise)?.0)
    }

    pub(crate) fn evaluate_core(
        &self,
        params: &KernelParams,
        kf: &CoregionalizationMatrix,
        s: &DMatrix<f64>,
        hypers: &[Hyper],
        want_noise: bool,
    ) -> Result<(MOGradients, Core, MercerBasis)> {
        check_kernel_hypers(params, hypers)?;
        let kind = params.kind();
        if kind != self.reference.kind() {
            return Err(Error::Dimension("kernel differs from the cached statistics".into()));
        }
        for &h in kind.hyperparameters() {
            let frozen = !kind.is_eigenvalue_only(h);
            if frozen && params.get(h)? != self.reference.get(h)? {
                return Err(Error::NotEigenvalueOnly(h.to_string()));
            }
            if frozen && hypers.contains(&h) {
                return Err(Error::NotEigenvalueOnly(h.to_string()));
            }
        }
        let basis = MercerBasis::new(*params, self.n)?;
        let sel = self.raw.selection(&basis)?;
        let suff = self.raw.suff(s, &sel, want_noise)?;
        let core = engine::solve(kf.l(), basis.eigenvalues(), &suff)?;
        let grads = mo_gradients(&core, &suff, &basis, hypers, want_noise)?;
        Ok((grads, core, basis))
    }
}
