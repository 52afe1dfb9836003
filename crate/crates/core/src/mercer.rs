//! Truncated Mercer expansions `k(x, x') ≈ Σ λ_i φ_i(x) φ_i(x')`.
//!
//! Slot conventions:
//! - squared-exponential: slot `i` is the `i`-th Hermite eigenfunction.
//! - periodic: `[1, cos(f x), sin(f x), cos(2 f x), sin(2 f x), ...]`; a cos/sin pair
//!   shares one eigenvalue, and the slot count must be odd.
//! - chebyshev: `[1, √2 T_1(x), √2 T_2(x), ...]`.
//!
//! Eigenvalues below [`EIGENVALUE_FLOOR`] times the largest one are dropped, so a
//! basis may retain fewer slots than requested; [`MercerBasis::slots`] tells which.

use std::f64::consts::FRAC_PI_2;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernel::{Hyper, KernelKind, KernelParams};
use crate::special::{binomial, chebyshev_t, chebyshev_t_derivative, scaled_hermite};

/// Relative eigenvalue floor: slots with `λ_i < FLOOR · max λ` are dropped.
pub const EIGENVALUE_FLOOR: f64 = 1e-14;

/// Highest input-derivative order supported by [`MercerBasis::basis_derivative`].
pub const MAX_DERIVATIVE_ORDER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SeNormalization {
    /// `sqrt(β / (2^i i!)) e^{-δ² x²} H_i(α β x)`.
    Standard,
    /// `sqrt(β / i!) e^{-α² x²} H_i(√2 α β x)`, kept only to show it does not reconstruct the kernel.
    #[cfg_attr(not(test), allow(dead_code))]
    AsPrinted,
}

#[derive(Clone, Copy, Debug)]
struct SeConstants {
    alpha: f64,
    length_scale: f64,
    eps2: f64,
    beta: f64,
    delta2: f64,
    denom: f64,
    normalization: SeNormalization,
}

impl SeConstants {
    fn new(length_scale: f64, alpha: f64) -> Self {
        let eps = 1.0 / (std::f64::consts::SQRT_2 * length_scale);
        let eps2 = eps * eps;
        let beta = (1.0 + 4.0 * eps2 / (alpha * alpha)).powf(0.25);
        let delta2 = alpha * alpha / 2.0 * (beta * beta - 1.0);
        SeConstants {
            alpha,
            length_scale,
            eps2,
            beta,
            delta2,
            denom: alpha * alpha + delta2 + eps2,
            normalization: SeNormalization::Standard,
        }
    }

    fn eigenvalue(&self, i: usize) -> f64 {
        (self.alpha * self.alpha / self.denom).sqrt() * (self.eps2 / self.denom).powi(i as i32)
    }

    /// (dβ/dl, dδ²/dl, dD/dl)
    fn length_scale_derivatives(&self) -> (f64, f64, f64) {
        let l = self.length_scale;
        let a2 = self.alpha * self.alpha;
        let dbeta = -2.0 * self.eps2 / (l * a2 * self.beta.powi(3));
        let ddelta2 = a2 * self.beta * dbeta;
        let ddenom = ddelta2 - 2.0 * self.eps2 / l;
        (dbeta, ddelta2, ddenom)
    }
}

#[derive(Clone, Copy, Debug)]
struct PeriodicConstants {
    frequency: f64,
    width: f64,
    harmonics: usize,
    gamma: f64,
    zeta: f64,
}

impl PeriodicConstants {
    fn new(frequency: f64, width: f64, slots: usize) -> Self {
        let harmonics = (slots - 1) / 2;
        // A lone constant slot still needs a defined offset/scale; use one harmonic's worth.
        let sums = harmonics.max(1);
        let w2 = width * width;
        let gamma = (1..=sums)
            .map(|i| {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-((i * i) as f64) * w2 / 2.0).exp()
            })
            .sum();
        let zeta = (1..=sums)
            .map(|i| {
                let j = (2 * i - 1) as f64;
                2.0 * (-(j * j) * w2 / 2.0).exp()
            })
            .sum();
        PeriodicConstants { frequency, width, harmonics, gamma, zeta }
    }

    fn harmonic_of(slot: usize) -> usize {
        slot.div_ceil(2)
    }

    fn eigenvalue(&self, slot: usize) -> f64 {
        if slot == 0 {
            self.gamma / self.zeta
        } else {
            let h = Self::harmonic_of(slot) as f64;
            (-(h * h) * self.width * self.width / 2.0).exp() / self.zeta
        }
    }

    /// (dγ/dw, dζ/dw)
    fn width_derivatives(&self) -> (f64, f64) {
        let w = self.width;
        let sums = self.harmonics.max(1);
        let dgamma = (1..=sums)
            .map(|i| {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                let i2 = (i * i) as f64;
                -sign * w * i2 * (-i2 * w * w / 2.0).exp()
            })
            .sum();
        let dzeta = (1..=sums)
            .map(|i| {
                let j2 = ((2 * i - 1) * (2 * i - 1)) as f64;
                -2.0 * w * j2 * (-j2 * w * w / 2.0).exp()
            })
            .sum();
        (dgamma, dzeta)
    }
}

#[derive(Clone, Copy, Debug)]
enum Family {
    SquaredExponential(SeConstants),
    Periodic(PeriodicConstants),
    Chebyshev { a: f64, b: f64 },
}

/// A truncated Mercer expansion bound to concrete hyperparameters.
#[derive(Clone, Debug)]
pub struct MercerBasis {
    params: KernelParams,
    requested: usize,
    slots: Vec<usize>,
    lambda: DVector<f64>,
    family: Family,
}

/// An `N × n` matrix of eigenfunction values (or input derivatives of them).
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub derivative_order: usize,
}

/// Builds the basis; see [`MercerBasis::new`].
pub fn make_basis(params: KernelParams, n: usize) -> Result<MercerBasis> {
    MercerBasis::new(params, n)
}

impl MercerBasis {
    pub fn new(params: KernelParams, n: usize) -> Result<Self> {
        params.validate()?;
        if n == 0 {
            return Err(invalid("n", "truncation order must be at least 1"));
        }
        let family = match params {
            KernelParams::SquaredExponential { length_scale, alpha } => {
                Family::SquaredExponential(SeConstants::new(length_scale, alpha))
            }
            KernelParams::Periodic { frequency, width } => {
                if n.is_multiple_of(2) {
                    return Err(invalid(
                        "n",
                        format!("periodic slot count must be odd (constant + cos/sin pairs), got {n}"),
                    ));
                }
                Family::Periodic(PeriodicConstants::new(frequency, width, n))
            }
            KernelParams::Chebyshev { a, b } => Family::Chebyshev { a, b },
        };
        let full: Vec<f64> = (0..n).map(|i| family_eigenvalue(&family, i)).collect();
        if full.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::NonFinite("eigenvalues".into()));
        }
        let max = full.iter().cloned().fold(0.0f64, f64::max);
        let floor = EIGENVALUE_FLOOR * max;
        let slots: Vec<usize> = (0..n).filter(|&i| full[i] > 0.0 && full[i] >= floor).collect();
        if n > 1 && !slots.iter().any(|&s| s > 0) {
            return Err(Error::EigenvalueUnderflow { floor });
        }
        if slots.is_empty() {
            return Err(Error::EigenvalueUnderflow { floor });
        }
        if slots.len() < n {
            warn!(
                "{}: dropped {} of {n} eigenvalues below the floor {floor:e}",
                params.kind(),
                n - slots.len()
            );
        }
        let lambda = DVector::from_iterator(slots.len(), slots.iter().map(|&s| full[s]));
        Ok(MercerBasis { params, requested: n, slots, lambda, family })
    }

    #[cfg(test)]
    pub(crate) fn with_se_normalization(mut self, normalization: SeNormalization) -> Self {
        if let Family::SquaredExponential(c) = &mut self.family {
            c.normalization = normalization;
        }
        self
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn kind(&self) -> KernelKind {
        self.params.kind()
    }

    /// Number of slots requested at construction.
    pub fn requested_order(&self) -> usize {
        self.requested
    }

    /// Number of retained eigenpairs (columns of every basis matrix).
    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    /// Original slot index of every retained column.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Periodic offset and scale factors `(γ, ζ)`.
    pub fn periodic_offset_scale(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::Periodic(c) => Some((c.gamma, c.zeta)),
            _ => None,
        }
    }

    pub(crate) fn check_inputs(&self, xs: &[f64]) -> Result<()> {
        for &x in xs {
            if !x.is_finite() {
                return Err(Error::NonFinite("basis inputs".into()));
            }
            if self.kind() == KernelKind::Chebyshev && x.abs() > 1.0 + 1e-12 {
                return Err(Error::Domain { value: x });
            }
        }
        Ok(())
    }

    /// Eigenfunction values as a `rank × len` matrix (one column per input), unchecked domain.
    pub(crate) fn columns(&self, xs: &[f64], order: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rank(), xs.len());
        self.fill_columns(xs, order, &self.slots, &mut out);
        out
    }

    /// Every requested slot, including ones dropped by the eigenvalue floor.
    pub(crate) fn all_slots(&self) -> Vec<usize> {
        (0..self.requested).collect()
    }

    /// Fills `out` (`slots.len() × xs.len()`) with the given slots' values at each input.
    pub(crate) fn fill_columns(&self, xs: &[f64], order: usize, slots: &[usize], out: &mut DMatrix<f64>) {
        debug_assert_eq!(out.nrows(), slots.len());
        debug_assert_eq!(out.ncols(), xs.len());
        let top = slots.iter().copied().max().unwrap_or(0);
        let mut scratch = Scratch::new(top + 1);
        for (j, &x) in xs.iter().enumerate() {
            let full = self.evaluate_all(x, order, &mut scratch);
            let mut col = out.column_mut(j);
            for (r, &s) in slots.iter().enumerate() {
                col[r] = full[s];
            }
        }
    }

    /// `∂φ/∂θ` columns (`rank × len`) for an eigenfunction hyperparameter.
    pub(crate) fn grad_columns(&self, xs: &[f64], hyper: Hyper) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rank(), xs.len());
        self.fill_grad_columns(xs, hyper, &self.slots, &mut out)?;
        Ok(out)
    }

    pub(crate) fn fill_grad_columns(
        &self,
        xs: &[f64],
        hyper: Hyper,
        slots: &[usize],
        out: &mut DMatrix<f64>,
    ) -> Result<()> {
        self.ensure_kernel_hyper(hyper)?;
        out.fill(0.0);
        match (self.family, hyper) {
            (Family::SquaredExponential(c), Hyper::LengthScale) => {
                let (dbeta, ddelta2, _) = c.length_scale_derivatives();
                let top = slots.iter().copied().max().unwrap_or(0);
                let mut scratch = Scratch::new(top + 1);
                for (j, &x) in xs.iter().enumerate() {
                    let phi = self.evaluate_all(x, 0, &mut scratch);
                    let radial = dbeta / (2.0 * c.beta) - ddelta2 * x * x;
                    let mut col = out.column_mut(j);
                    for (r, &s) in slots.iter().enumerate() {
                        let mut v = radial * phi[s];
                        if s > 0 {
                            v += (2.0 * s as f64).sqrt() * c.alpha * dbeta * x * phi[s - 1];
                        }
                        col[r] = v;
                    }
                }
            }
            (Family::Periodic(c), Hyper::Frequency) => {
                for (j, &x) in xs.iter().enumerate() {
                    let mut col = out.column_mut(j);
                    for (r, &s) in slots.iter().enumerate() {
                        if s == 0 {
                            continue;
                        }
                        let h = PeriodicConstants::harmonic_of(s) as f64;
                        let arg = h * c.frequency * x;
                        col[r] = if s % 2 == 1 { -h * x * arg.sin() } else { h * x * arg.cos() };
                    }
                }
            }
            // Remaining kernel hyperparameters live only in the eigenvalues.
            _ => {}
        }
        Ok(())
    }

    fn ensure_kernel_hyper(&self, hyper: Hyper) -> Result<()> {
        if self.kind().hyperparameters().contains(&hyper) {
            Ok(())
        } else {
            Err(Error::UnknownParameter(hyper.to_string()))
        }
    }

    fn evaluate_all<'a>(&self, x: f64, order: usize, scratch: &'a mut Scratch) -> &'a [f64] {
        let len = scratch.values.len();
        match self.family {
            Family::SquaredExponential(c) => match c.normalization {
                SeNormalization::Standard => {
                    let z = c.alpha * c.beta * x;
                    scaled_hermite(z, -c.delta2 * x * x, &mut scratch.hermite);
                    let sb = c.beta.sqrt();
                    if order == 0 {
                        for i in 0..len {
                            scratch.values[i] = sb * scratch.hermite[i];
                        }
                    } else {
                        // Leibniz over envelope P_m(x) e^{-δ²x²} and the Appell-lowered Hermite part.
                        let env = &mut scratch.envelope;
                        env[0] = 1.0;
                        if order >= 1 {
                            env[1] = -2.0 * c.delta2 * x;
                        }
                        for m in 1..order {
                            env[m + 1] =
                                -2.0 * c.delta2 * x * env[m] - 2.0 * c.delta2 * m as f64 * env[m - 1];
                        }
                        let lift = std::f64::consts::SQRT_2 * c.alpha * c.beta;
                        for i in 0..len {
                            let mut acc = 0.0;
                            let mut falling_sqrt = 1.0;
                            let mut lift_pow = 1.0;
                            for j in 0..=order.min(i) {
                                if j > 0 {
                                    falling_sqrt *= ((i + 1 - j) as f64).sqrt();
                                    lift_pow *= lift;
                                }
                                acc += binomial(order, j)
                                    * env[order - j]
                                    * lift_pow
                                    * falling_sqrt
                                    * scratch.hermite[i - j];
                            }
                            scratch.values[i] = sb * acc;
                        }
                    }
                }
                SeNormalization::AsPrinted => {
                    assert_eq!(order, 0, "printed SE normalization supports order 0 only");
                    let z = std::f64::consts::SQRT_2 * c.alpha * c.beta * x;
                    scaled_hermite(z, -c.alpha * c.alpha * x * x, &mut scratch.hermite);
                    let sb = c.beta.sqrt();
                    for i in 0..len {
                        scratch.values[i] = sb * 2f64.powf(i as f64 / 2.0) * scratch.hermite[i];
                    }
                }
            },
            Family::Periodic(c) => {
                scratch.values[0] = if order == 0 { 1.0 } else { 0.0 };
                let shift = order as f64 * FRAC_PI_2;
                for s in 1..len {
                    let omega = PeriodicConstants::harmonic_of(s) as f64 * c.frequency;
                    let scale = omega.powi(order as i32);
                    let arg = omega * x + shift;
                    scratch.values[s] = scale * if s % 2 == 1 { arg.cos() } else { arg.sin() };
                }
            }
            Family::Chebyshev { .. } => {
                chebyshev_t(x, &mut scratch.hermite);
                scratch.values[0] = if order == 0 { 1.0 } else { 0.0 };
                for i in 1..len {
                    let t = if order == 0 {
                        scratch.hermite[i]
                    } else {
                        chebyshev_t_derivative(i, order, &scratch.hermite)
                    };
                    scratch.values[i] = std::f64::consts::SQRT_2 * t;
                }
            }
        }
        &scratch.values
    }

    fn to_matrix(&self, cols: DMatrix<f64>, order: usize, xs: &[f64]) -> Result<BasisMatrix> {
        if let Some(pos) = cols.iter().position(|v| !v.is_finite()) {
            return Err(Error::Overflow { x: xs[pos / self.rank().max(1)] });
        }
        Ok(BasisMatrix { values: cols.transpose(), derivative_order: order })
    }

    /// `Φ_X` with entry `(i, j) = φ_j(x_i)`.
    pub fn basis_matrix(&self, xs: &[f64]) -> Result<BasisMatrix> {
        self.check_inputs(xs)?;
        self.to_matrix(self.columns(xs, 0), 0, xs)
    }

    /// `∂^k Φ_X / ∂x^k`.
    pub fn basis_derivative(&self, xs: &[f64], k: usize) -> Result<BasisMatrix> {
        if k == 0 || k > MAX_DERIVATIVE_ORDER {
            return Err(invalid("k", format!("derivative order must be in 1..={MAX_DERIVATIVE_ORDER}")));
        }
        self.check_inputs(xs)?;
        self.to_matrix(self.columns(xs, k), k, xs)
    }

    /// `∂λ_i / ∂θ` for every retained slot.
    pub fn lambda_grad(&self, hyper: Hyper) -> Result<DVector<f64>> {
        self.ensure_kernel_hyper(hyper)?;
        let grads = self.slots.iter().zip(self.lambda.iter()).map(|(&s, &lam)| {
            match (self.family, hyper) {
                (Family::SquaredExponential(c), Hyper::LengthScale) => {
                    let (_, _, ddenom) = c.length_scale_derivatives();
                    let i = s as f64;
                    lam * (-(i + 0.5) * ddenom / c.denom - 2.0 * i / c.length_scale)
                }
                (Family::Periodic(c), Hyper::Width) => {
                    let (dgamma, dzeta) = c.width_derivatives();
                    if s == 0 {
                        dgamma / c.zeta - dzeta * c.gamma / (c.zeta * c.zeta)
                    } else {
                        let h = PeriodicConstants::harmonic_of(s) as f64;
                        -c.width * h * h * lam - dzeta * lam / c.zeta
                    }
                }
                (Family::Chebyshev { a, .. }, Hyper::ChebA) => {
                    if s == 0 {
                        -1.0
                    } else {
                        lam / a
                    }
                }
                (Family::Chebyshev { a, b }, Hyper::ChebB) => {
                    if s == 0 {
                        0.0
                    } else {
                        let i = s as f64;
                        -a * (i * (b - 1.0) + 1.0) * b.powi(s as i32 - 2)
                    }
                }
                _ => 0.0,
            }
        });
        Ok(DVector::from_iterator(self.rank(), grads))
    }

    /// `∂Φ_X / ∂θ`; the zero matrix for hyperparameters that live only in the eigenvalues.
    pub fn basis_matrix_grad(&self, xs: &[f64], hyper: Hyper) -> Result<BasisMatrix> {
        self.ensure_kernel_hyper(hyper)?;
        self.check_inputs(xs)?;
        let cols = self.grad_columns(xs, hyper)?;
        self.to_matrix(cols, 0, xs)
    }

    /// `Φ_X Λ Φ_{X2}^T`.
    pub fn reconstruct_kernel(&self, xs: &[f64], xs2: &[f64]) -> Result<DMatrix<f64>> {
        self.check_inputs(xs)?;
        self.check_inputs(xs2)?;
        let a = self.columns(xs, 0);
        let mut b = self.columns(xs2, 0);
        for (mut row, &l) in b.row_iter_mut().zip(self.lambda.iter()) {
            row *= l;
        }
        Ok(a.transpose() * b)
    }

    /// Whether `hyper` leaves `Φ_X` unchanged for this family.
    pub fn is_eigenvalue_only(&self, hyper: Hyper) -> bool {
        self.kind().is_eigenvalue_only(hyper)
    }
}

fn family_eigenvalue(family: &Family, i: usize) -> f64 {
    match family {
        Family::SquaredExponential(c) => c.eigenvalue(i),
        Family::Periodic(c) => c.eigenvalue(i),
        Family::Chebyshev { a, b } => {
            if i == 0 {
                1.0 - a
            } else {
                a * (1.0 - b) * b.powi(i as i32 - 1)
            }
        }
    }
}

struct Scratch {
    values: Vec<f64>,
    hermite: Vec<f64>,
    envelope: Vec<f64>,
}

impl Scratch {
    fn new(len: usize) -> Self {
        Scratch {
            values: vec![0.0; len],
            hermite: vec![0.0; len],
            envelope: vec![0.0; MAX_DERIVATIVE_ORDER + 2],
        }
    }
}

/// Mean absolute difference between the reconstructed and exact kernel on `xs × xs`.
pub fn reconstruction_mad(basis: &MercerBasis, xs: &[f64]) -> Result<f64> {
    let approx = basis.reconstruct_kernel(xs, xs)?;
    let mut total = 0.0;
    for (j, &xj) in xs.iter().enumerate() {
        for (i, &xi) in xs.iter().enumerate() {
            total += (approx[(i, j)] - crate::kernel::kernel_eval(basis.params(), xi, xj)?).abs();
        }
    }
    Ok(total / (xs.len() * xs.len()) as f64)
}

/// Evenly spaced grid of `m` points on `[lo, hi]` (both ends included when `m > 1`).
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        _ => (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se(l: f64) -> KernelParams {
        KernelParams::squared_exponential(l, 1.0).unwrap()
    }

    #[test]
    fn chebyshev_eigenvalues() {
        let b = MercerBasis::new(KernelParams::chebyshev(0.9, 0.9).unwrap(), 3).unwrap();
        let expect = [0.1, 0.09, 0.081];
        for (got, want) in b.eigenvalues().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn se_eigenvalues_strictly_decreasing() {
        for l in [0.05, 0.2, 1.0, 3.0] {
            let b = MercerBasis::new(se(l), 30).unwrap();
            let lam = b.eigenvalues();
            for i in 1..lam.len() {
                assert!(lam[i] < lam[i - 1]);
            }
        }
    }

    #[test]
    fn chebyshev_row_at_half() {
        let b = MercerBasis::new(KernelParams::chebyshev(0.9, 0.9).unwrap(), 3).unwrap();
        let m = b.basis_matrix(&[0.5]).unwrap();
        let s = std::f64::consts::SQRT_2;
        let expect = [1.0, s * 0.5, s * (2.0 * 0.25 - 1.0)];
        for (j, e) in expect.iter().enumerate() {
            assert!((m.values[(0, j)] - e).abs() < 1e-15);
        }
        assert_eq!(m.derivative_order, 0);
    }

    #[test]
    fn periodic_row_at_zero() {
        let b = MercerBasis::new(KernelParams::periodic(2.0, 0.4).unwrap(), 9).unwrap();
        let m = b.basis_matrix(&[0.0]).unwrap();
        let expect = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(m.values.row(0).iter().cloned().collect::<Vec<_>>(), expect);
        let d = b.basis_derivative(&[0.0], 1).unwrap();
        let expect_d = [0.0, 0.0, 2.0, 0.0, 4.0, 0.0, 6.0, 0.0, 8.0];
        for (j, e) in expect_d.iter().enumerate() {
            assert!((d.values[(0, j)] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_even_slot_count_rejected() {
        let err = MercerBasis::new(KernelParams::periodic(2.0, 0.4).unwrap(), 10).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "n", .. }));
    }

    #[test]
    fn periodic_single_slot_is_constant() {
        let b = MercerBasis::new(KernelParams::periodic(2.0, 0.4).unwrap(), 1).unwrap();
        let (g, z) = b.periodic_offset_scale().unwrap();
        let k = b.reconstruct_kernel(&[-0.5, 0.2, 0.9], &[0.1, 0.7]).unwrap();
        assert!(k.iter().all(|v| (v - g / z).abs() < 1e-15));
    }

    #[test]
    fn chebyshev_domain_error() {
        let b = MercerBasis::new(KernelParams::chebyshev(0.5, 0.5).unwrap(), 4).unwrap();
        assert!(matches!(b.basis_matrix(&[0.2, -1.5]), Err(Error::Domain { .. })));
        assert!(matches!(b.basis_derivative(&[1.01], 1), Err(Error::Domain { .. })));
    }

    #[test]
    fn chebyshev_a_one_drops_constant_slot() {
        let b = MercerBasis::new(KernelParams::chebyshev(1.0, 0.5).unwrap(), 5).unwrap();
        assert_eq!(b.slots(), &[1, 2, 3, 4]);
        assert!(b.eigenvalues().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn tiny_eigenvalues_are_floored() {
        let b = MercerBasis::new(se(2.0), 200).unwrap();
        assert!(b.rank() < 200);
        let lam = b.eigenvalues();
        assert!(lam.min() >= EIGENVALUE_FLOOR * lam.max());
    }

    #[test]
    fn se_standard_normalization_reconstructs_kernel() {
        let xs = linspace(-1.0, 1.0, 200);
        let standard = MercerBasis::new(se(0.2), 20).unwrap();
        let printed = standard.clone().with_se_normalization(SeNormalization::AsPrinted);
        let mad_std = reconstruction_mad(&standard, &xs).unwrap();
        let mad_printed = reconstruction_mad(&printed, &xs).unwrap();
        assert!(mad_std <= 2e-3, "standard MAD {mad_std}");
        assert!(mad_printed > 2e-3, "printed MAD {mad_printed}");
    }

    #[test]
    fn basis_stays_finite_at_order_200() {
        let xs = linspace(-1.0, 1.0, 101);
        for l in [0.02, 0.1, 1.0] {
            let b = MercerBasis::new(se(l), 200).unwrap();
            let m = b.basis_matrix(&xs).unwrap();
            assert!(m.values.iter().all(|v| v.is_finite()));
            let d = b.basis_derivative(&xs, 3).unwrap();
            assert!(d.values.iter().all(|v| v.is_finite()));
        }
        let c = MercerBasis::new(KernelParams::chebyshev(0.99, 0.99).unwrap(), 200).unwrap();
        assert!(c.basis_matrix(&xs).unwrap().values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chebyshev_t1_derivative_column() {
        let b = MercerBasis::new(KernelParams::chebyshev(0.5, 0.5).unwrap(), 5).unwrap();
        let d = b.basis_derivative(&[-0.8, 0.1, 0.6], 1).unwrap();
        for i in 0..3 {
            assert!((d.values[(i, 1)] - std::f64::consts::SQRT_2).abs() < 1e-14);
            assert_eq!(d.values[(i, 0)], 0.0);
        }
    }

    #[test]
    fn chebyshev_and_periodic_width_grads_are_zero_matrices() {
        let xs = [0.3, -0.2];
        let c = MercerBasis::new(KernelParams::chebyshev(0.6, 0.4).unwrap(), 6).unwrap();
        for h in [Hyper::ChebA, Hyper::ChebB] {
            assert!(c.basis_matrix_grad(&xs, h).unwrap().values.iter().all(|&v| v == 0.0));
        }
        let p = MercerBasis::new(KernelParams::periodic(2.0, 0.5).unwrap(), 7).unwrap();
        assert!(p.basis_matrix_grad(&xs, Hyper::Width).unwrap().values.iter().all(|&v| v == 0.0));
        let at_zero = p.basis_matrix_grad(&[0.0], Hyper::Frequency).unwrap();
        assert!(at_zero.values.iter().all(|&v| v == 0.0));
        assert!(matches!(p.lambda_grad(Hyper::LengthScale), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn chebyshev_lambda_grad_constant_slot() {
        let c = MercerBasis::new(KernelParams::chebyshev(0.6, 0.4).unwrap(), 6).unwrap();
        assert_eq!(c.lambda_grad(Hyper::ChebA).unwrap()[0], -1.0);
        assert_eq!(c.lambda_grad(Hyper::ChebB).unwrap()[0], 0.0);
    }
}
