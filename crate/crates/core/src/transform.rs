//! Affine input normalization onto `[-1, 1]`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelKind, KernelParams};

/// How far past `[-1, 1]` (relative) predictions may go before chebyshev models refuse.
pub const EXTRAPOLATION_MARGIN: f64 = 0.05;

/// `u = (x - shift) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub shift: f64,
    pub scale: f64,
}

impl Default for InputTransform {
    fn default() -> Self {
        InputTransform::identity()
    }
}

impl InputTransform {
    pub fn identity() -> Self {
        InputTransform { shift: 0.0, scale: 1.0 }
    }

    pub fn new(shift: f64, scale: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(invalid("shift", "must be finite"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(invalid("scale", "must be positive and finite"));
        }
        Ok(InputTransform { shift, scale })
    }

    /// Maps the range of `xs` onto `[-1, 1]`; a single distinct value maps to 0.
    pub fn fit(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in xs {
            if !x.is_finite() {
                return Err(Error::NonFinite("inputs".into()));
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let half = (hi - lo) / 2.0;
        let scale = if half > 0.0 { half } else { 1.0 };
        Ok(InputTransform { shift: (hi + lo) / 2.0, scale })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn invert(&self, u: f64) -> f64 {
        u * self.scale + self.shift
    }

    /// Factor turning a `k`-th derivative in normalized units into raw units.
    pub fn chain_factor(&self, k: usize) -> f64 {
        self.scale.powi(-(k as i32))
    }

    /// Expresses normalized-unit kernel parameters in raw input units.
    ///
    /// Chebyshev parameters are tied to the `[-1, 1]` domain and pass through unchanged.
    pub fn params_to_raw(&self, p: KernelParams) -> KernelParams {
        match p {
            KernelParams::SquaredExponential { length_scale, alpha } => {
                KernelParams::SquaredExponential { length_scale: length_scale * self.scale, alpha }
            }
            KernelParams::Periodic { frequency, width } => {
                KernelParams::Periodic { frequency: frequency / self.scale, width }
            }
            c => c,
        }
    }

    /// Inverse of [`InputTransform::params_to_raw`].
    pub fn params_from_raw(&self, p: KernelParams) -> KernelParams {
        InputTransform { shift: 0.0, scale: 1.0 / self.scale }.params_to_raw(p)
    }

    /// Normalizes training inputs; the tiny overshoot from rounding is clamped away.
    pub(crate) fn normalize_training(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x).clamp(-1.0, 1.0)).collect()
    }

    pub(crate) fn normalize_one(&self, kind: KernelKind, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite("prediction inputs".into()));
        }
        let u = self.apply(x);
        if u.abs() <= 1.0 {
            return Ok(u);
        }
        if u.abs() <= 1.0 + EXTRAPOLATION_MARGIN {
            if kind == KernelKind::Chebyshev {
                return Ok(u.clamp(-1.0, 1.0));
            }
            return Ok(u);
        }
        if kind == KernelKind::Chebyshev {
            return Err(Error::Domain { value: u });
        }
        Ok(u)
    }

    /// Normalizes prediction inputs, warning once when any of them extrapolate.
    pub(crate) fn normalize_prediction(&self, kind: KernelKind, xs: &[f64]) -> Result<Vec<f64>> {
        let out = xs.iter().map(|&x| self.normalize_one(kind, x)).collect::<Result<Vec<_>>>()?;
        let worst = xs.iter().map(|&x| self.apply(x).abs()).fold(0.0f64, f64::max);
        if worst > 1.0 {
            if worst <= 1.0 + EXTRAPOLATION_MARGIN {
                warn!("prediction inputs extrapolate up to {:.3} in normalized units", worst);
            } else {
                warn!("prediction inputs extrapolate far beyond the training range ({worst:.3} normalized)");
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_maps_range_to_unit_interval() {
        let t = InputTransform::fit(&[-5.0, 0.0, 3.0, 5.0]).unwrap();
        assert_eq!(t.apply(-5.0), -1.0);
        assert_eq!(t.apply(5.0), 1.0);
        assert!((t.invert(t.apply(2.7)) - 2.7).abs() < 1e-15);
        assert_eq!(t.chain_factor(2), 1.0 / 25.0);
    }

    #[test]
    fn constant_inputs_do_not_divide_by_zero() {
        let t = InputTransform::fit(&[2.0, 2.0]).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.apply(2.0), 0.0);
    }

    #[test]
    fn chebyshev_extrapolation_policy() {
        let t = InputTransform::identity();
        assert_eq!(t.normalize_one(KernelKind::Chebyshev, 1.03).unwrap(), 1.0);
        assert!(t.normalize_one(KernelKind::Chebyshev, 1.2).is_err());
        assert_eq!(t.normalize_one(KernelKind::SquaredExponential, 1.2).unwrap(), 1.2);
    }

    #[test]
    fn empty_and_nonfinite_rejected() {
        assert!(matches!(InputTransform::fit(&[]), Err(Error::EmptyDataset)));
        assert!(InputTransform::fit(&[0.0, f64::NAN]).is_err());
        assert!(InputTransform::new(0.0, 0.0).is_err());
    }
}
