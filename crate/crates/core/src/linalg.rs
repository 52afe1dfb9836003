//! Dense helpers: jittered Cholesky, triangular inverses, Kronecker products.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// First and last relative jitter tried when a factorization fails.
pub const JITTER_START: f64 = 1e-12;
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of a symmetric positive definite matrix, possibly after adding jitter.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factorizes `m`, escalating diagonal jitter `1e-12·tr/n, 1e-11·tr/n, ...` up to `1e-6·tr/n`.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", n, m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix to factorize".into()));
        }
        if n == 0 {
            return Ok(SpdFactor { chol: Cholesky::new(DMatrix::zeros(0, 0)).expect("empty"), jitter: 0.0 });
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(SpdFactor { chol, jitter: 0.0 });
        }
        let mean_diag = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * mean_diag;
            let mut shifted = m.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                warn!("matrix of size {n} factorized after adding jitter {jitter:e}");
                return Ok(SpdFactor { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::NotPositiveDefinite { jitter: JITTER_MAX * mean_diag })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        forward_substitute(&self.chol.l(), x.as_mut_slice());
        x
    }

    /// Explicit inverse via `L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = lower_triangular_inverse(&self.chol.l());
        let mut inv = linv.transpose() * &linv;
        symmetrize(&mut inv);
        inv
    }
}

fn forward_substitute(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    for k in 0..n {
        x[k] /= l[(k, k)];
        let xk = x[k];
        if xk != 0.0 {
            let col = l.column(k);
            for i in k + 1..n {
                x[i] -= col[i] * xk;
            }
        }
    }
}

/// Inverse of a lower-triangular matrix with nonzero diagonal; the result is lower triangular.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let ls = l.as_slice();
    for j in 0..n {
        let col = &mut inv.as_mut_slice()[j * n..(j + 1) * n];
        col[j] = 1.0;
        for k in j..n {
            let xk = col[k] / ls[k * n + k];
            col[k] = xk;
            if xk != 0.0 {
                let lcol = &ls[k * n..(k + 1) * n];
                for i in k + 1..n {
                    col[i] -= lcol[i] * xk;
                }
            }
        }
    }
    inv
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `(A ⊗ B) x` without forming the product, using `vec(B X Aᵀ)`.
pub fn kron_apply(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    assert_eq!(x.len(), a.ncols() * b.ncols(), "kron_apply dimension mismatch");
    let xm = DMatrix::from_column_slice(b.ncols(), a.ncols(), x.as_slice());
    let y = b * xm * a.transpose();
    DVector::from_column_slice(y.as_slice())
}

/// Symmetric square root and inverse square root of an SPD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let v = &eig.eigenvectors;
    let sq = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    let isq = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt())) * v.transpose();
    Ok((sq, isq))
}

/// `diag(d) M diag(d)`.
pub fn scale_sym(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..out.ncols() {
        for i in 0..out.nrows() {
            out[(i, j)] *= d[i] * d[j];
        }
    }
    out
}

/// Largest elementwise relative difference, with `floor` guarding near-zero references.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn triangular_inverse_is_inverse() {
        let m = random_spd(30, 1);
        let f = SpdFactor::new(&m).unwrap();
        let inv = f.inverse();
        let err = (&inv * &m - DMatrix::<f64>::identity(30, 30)).abs().max();
        assert!(err < 1e-9, "{err}");
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let m = random_spd(12, 2);
        let f = SpdFactor::new(&m).unwrap();
        let eig: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.ln()).sum();
        assert!((f.log_det() - eig).abs() < 1e-10);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let f = SpdFactor::new(&m).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= 1e-6 * m.trace() / 3.0);
    }

    #[test]
    fn indefinite_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(SpdFactor::new(&m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn kron_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
        let b = DMatrix::from_fn(4, 5, |_, _| rng.random::<f64>());
        let x = DVector::from_fn(10, |_, _| rng.random::<f64>());
        let dense = kron(&a, &b) * &x;
        assert!((kron_apply(&a, &b, &x) - dense).abs().max() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = random_spd(6, 4);
        let (s, is) = sym_sqrt(&m).unwrap();
        assert!((&s * &s - &m).abs().max() < 1e-10);
        assert!((&s * &is - DMatrix::<f64>::identity(6, 6)).abs().max() < 1e-10);
    }
}
