//! Posterior solve in the scaled form `B = I + Qᵀ H Q`, `Q = L ⊗ Λ^{1/2}`.
//!
//! With prior weight covariance `P = QQᵀ = K_f ⊗ Λ` and `H = ΩᵀΣ⁻¹Ω`:
//! `Λ̄⁻¹ = (P⁻¹ + H)⁻¹ = Q B⁻¹ Qᵀ`, `α′ = Λ̄⁻¹ c`, `log|K| = log|B| + log|Σ|`.
//! Gradients are phrased through `β = B⁻¹Qᵀc` and `R = I − B⁻¹`, which avoids
//! ever multiplying by `Λ⁻¹`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lower_triangular_inverse, symmetrize, SpdFactor};
use crate::stats::{NoiseRaw, Suff};

#[derive(Clone, Debug)]
pub(crate) struct Core {
    pub m: usize,
    pub rank: usize,
    pub b_inv: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub g: DMatrix<f64>,
    pub log_det_b: f64,
    pub quad: f64,
    pub l: DMatrix<f64>,
}

fn kron_q(l: &DMatrix<f64>, sqrt_lambda: &DVector<f64>) -> DMatrix<f64> {
    l.kronecker(&DMatrix::from_diagonal(sqrt_lambda))
}

pub(crate) fn solve(l: &DMatrix<f64>, lambda: &DVector<f64>, suff: &Suff) -> Result<Core> {
    let m = suff.m;
    let r = suff.rank;
    if l.nrows() != m || lambda.len() != r {
        return Err(Error::Dimension(format!(
            "prior is {}x{} over {} eigenvalues, statistics are for {m} outputs and {r} slots",
            l.nrows(),
            l.ncols(),
            lambda.len()
        )));
    }
    let q = kron_q(l, &lambda.map(f64::sqrt));
    let mut b = q.transpose() * (&suff.h * &q);
    for i in 0..b.nrows() {
        b[(i, i)] += 1.0;
    }
    symmetrize(&mut b);
    let f = SpdFactor::new(&b)?;
    let b_inv = f.inverse();
    let qc = q.tr_mul(&suff.c);
    let beta = f.solve_vec(&qc);
    let alpha = &q * &beta;
    let mut g = &q * &b_inv * q.transpose();
    symmetrize(&mut g);
    // yy − 2βᵀQᵀc + βᵀBβ equals yy − βᵀQᵀc at the exact β but is stationary in β,
    // so solve error in an ill-conditioned B enters only to second order.
    let quad = suff.yy - 2.0 * qc.dot(&beta) + beta.dot(&(&b * &beta));
    if !quad.is_finite() || alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior weights".into()));
    }
    Ok(Core { m, rank: r, b_inv, beta, alpha, g, log_det_b: f.log_det(), quad, l: l.clone() })
}

impl Core {
    pub fn lml(&self, suff: &Suff) -> f64 {
        -0.5 * self.quad - 0.5 * (self.log_det_b + suff.log_det_noise) - 0.5 * suff.n_obs as f64 * (2.0 * PI).ln()
    }

    /// Gradient for `∂P = K_f ⊗ diag(λ̇)`, given `ratio = λ̇ / λ`.
    pub fn grad_eigen(&self, ratio: &DVector<f64>) -> f64 {
        let r = self.rank;
        let mut acc = 0.0;
        for a in 0..self.m {
            for i in 0..r {
                let idx = a * r + i;
                acc += ratio[i] * (self.beta[idx] * self.beta[idx] - (1.0 - self.b_inv[(idx, idx)]));
            }
        }
        0.5 * acc
    }

    /// Gradient contribution of `∂Ω = I ⊗ Φ̇`, given `C = ΩᵀΣ⁻¹Ω̇` and `d = Ω̇ᵀΣ⁻¹y`.
    pub fn grad_phi(&self, c: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
        let q = d - c.tr_mul(&self.alpha);
        let trace = self.g.component_mul(&c.transpose()).sum();
        q.dot(&self.alpha) - trace
    }

    /// `∂LML/∂K_f` treating the entries of `K_f` as independent (symmetric result).
    pub fn grad_kf(&self) -> DMatrix<f64> {
        let m = self.m;
        let r = self.rank;
        let linv = lower_triangular_inverse(&self.l);
        let lit = linv.transpose();
        // p̃ = (L⁻ᵀ ⊗ I) β and W̃ = (L⁻ᵀ ⊗ I) R (L⁻¹ ⊗ I), blockwise.
        let beta_m = DMatrix::from_column_slice(r, m, self.beta.as_slice());
        let p_tilde = &beta_m * linv.clone();
        let mut rmat = -self.b_inv.clone();
        for i in 0..rmat.nrows() {
            rmat[(i, i)] += 1.0;
        }
        // Block traces T_ab = tr(R_ab), then tr(W̃_ab) = Σ_cd L⁻ᵀ_ac T_cd L⁻¹_db.
        let mut t = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                t[(a, b)] = (0..r).map(|i| rmat[(a * r + i, b * r + i)]).sum();
            }
        }
        let w_tr = &lit * t * &linv;
        let mut gamma = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                gamma[(a, b)] = 0.5 * p_tilde.column(a).dot(&p_tilde.column(b)) - 0.5 * w_tr[(a, b)];
            }
        }
        symmetrize(&mut gamma);
        gamma
    }

    /// Gradients with respect to each output's noise variance (diagonal, unit-weight noise).
    pub fn grad_noise(&self, raw: &NoiseRaw) -> Vec<f64> {
        let r = self.rank;
        (0..self.m)
            .map(|j| {
                let w = 1.0 / raw.sigma2[j];
                let aj = self.alpha.rows(j * r, r);
                let resid2 = raw.yy[j] - 2.0 * raw.c[j].dot(&aj) + aj.dot(&(&raw.a[j] * aj));
                let gjj = self.g.view((j * r, j * r), (r, r));
                let tr = gjj.component_mul(&raw.a[j]).sum();
                let trace_kinv = raw.count[j] as f64 * w - w * w * tr;
                0.5 * w * w * resid2 - 0.5 * trace_kinv
            })
            .collect()
    }
}

/// `∂LML/∂L` from `∂LML/∂K_f`, restricted to the lower triangle.
pub(crate) fn grad_l_from_kf(gamma: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let full = (gamma + gamma.transpose()) * l;
    DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| if i >= j { full[(i, j)] } else { 0.0 })
}
