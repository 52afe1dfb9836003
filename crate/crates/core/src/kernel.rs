//! Closed-form kernels and their hyperparameters.
//!
//! All kernels here carry unit output scale; signal variance is owned by the
//! model (a scalar for single-output models, `K_f` for multi-output ones).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default global scale of the squared-exponential eigenfunctions.
pub const DEFAULT_ALPHA_SE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    SquaredExponential,
    Periodic,
    Chebyshev,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::SquaredExponential => "squared-exponential",
            KernelKind::Periodic => "periodic",
            KernelKind::Chebyshev => "chebyshev",
        }
    }

    /// Hyperparameters of the kernel itself (not noise or signal variance).
    pub fn hyperparameters(self) -> &'static [Hyper] {
        match self {
            KernelKind::SquaredExponential => &[Hyper::LengthScale],
            KernelKind::Periodic => &[Hyper::Frequency, Hyper::Width],
            KernelKind::Chebyshev => &[Hyper::ChebA, Hyper::ChebB],
        }
    }

    /// True when `hyper` only enters the eigenvalues, so `Phi_X` can stay frozen.
    pub fn is_eigenvalue_only(self, hyper: Hyper) -> bool {
        match hyper {
            Hyper::SignalVariance | Hyper::NoiseVariance => true,
            Hyper::Width => self == KernelKind::Periodic,
            Hyper::ChebA | Hyper::ChebB => self == KernelKind::Chebyshev,
            Hyper::LengthScale | Hyper::Frequency => false,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared-exponential" | "se" | "exp" => Ok(KernelKind::SquaredExponential),
            "periodic" | "pr" => Ok(KernelKind::Periodic),
            "chebyshev" | "ch" | "che" => Ok(KernelKind::Chebyshev),
            other => Err(Error::Parse(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// A named trainable scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hyper {
    #[serde(rename = "l_se")]
    LengthScale,
    #[serde(rename = "f_pr")]
    Frequency,
    #[serde(rename = "w_pr")]
    Width,
    #[serde(rename = "a")]
    ChebA,
    #[serde(rename = "b")]
    ChebB,
    #[serde(rename = "signal_variance")]
    SignalVariance,
    #[serde(rename = "noise_variance")]
    NoiseVariance,
}

impl Hyper {
    pub fn as_str(self) -> &'static str {
        match self {
            Hyper::LengthScale => "l_se",
            Hyper::Frequency => "f_pr",
            Hyper::Width => "w_pr",
            Hyper::ChebA => "a",
            Hyper::ChebB => "b",
            Hyper::SignalVariance => "signal_variance",
            Hyper::NoiseVariance => "noise_variance",
        }
    }

    pub fn is_kernel(self) -> bool {
        !matches!(self, Hyper::SignalVariance | Hyper::NoiseVariance)
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Hyper {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "l_se" | "length_scale" => Hyper::LengthScale,
            "f_pr" | "frequency" => Hyper::Frequency,
            "w_pr" | "width" => Hyper::Width,
            "a" => Hyper::ChebA,
            "b" => Hyper::ChebB,
            "signal_variance" | "scale" => Hyper::SignalVariance,
            "noise_variance" | "noise" => Hyper::NoiseVariance,
            other => return Err(Error::UnknownParameter(other.to_string())),
        })
    }
}

/// Hyperparameters of one kernel family. Construction validates the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub enum KernelParams {
    SquaredExponential { length_scale: f64, alpha: f64 },
    Periodic { frequency: f64, width: f64 },
    Chebyshev { a: f64, b: f64 },
}

impl KernelParams {
    pub fn squared_exponential(length_scale: f64, alpha: f64) -> Result<Self> {
        let p = KernelParams::SquaredExponential { length_scale, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn periodic(frequency: f64, width: f64) -> Result<Self> {
        let p = KernelParams::Periodic { frequency, width };
        p.validate()?;
        Ok(p)
    }

    pub fn chebyshev(a: f64, b: f64) -> Result<Self> {
        let p = KernelParams::Chebyshev { a, b };
        p.validate()?;
        Ok(p)
    }

    /// Default initial values: `l_se = 0.5`, `w_pr = 0.5` with `f_pr = 1`, `a = b = 0.5`.
    pub fn default_for(kind: KernelKind) -> Self {
        match kind {
            KernelKind::SquaredExponential => {
                KernelParams::SquaredExponential { length_scale: 0.5, alpha: DEFAULT_ALPHA_SE }
            }
            KernelKind::Periodic => KernelParams::Periodic { frequency: 1.0, width: 0.5 },
            KernelKind::Chebyshev => KernelParams::Chebyshev { a: 0.5, b: 0.5 },
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelParams::SquaredExponential { .. } => KernelKind::SquaredExponential,
            KernelParams::Periodic { .. } => KernelKind::Periodic,
            KernelParams::Chebyshev { .. } => KernelKind::Chebyshev,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must be finite and > 0")))
            }
        }
        match *self {
            KernelParams::SquaredExponential { length_scale, alpha } => {
                positive("l_se", length_scale)?;
                positive("alpha_se", alpha)
            }
            KernelParams::Periodic { frequency, width } => {
                positive("f_pr", frequency)?;
                positive("w_pr", width)
            }
            KernelParams::Chebyshev { a, b } => {
                if !(a > 0.0 && a <= 1.0) {
                    return Err(invalid("a", format!("{a} must lie in (0, 1]")));
                }
                if !(b > 0.0 && b < 1.0) {
                    return Err(invalid("b", format!("{b} must lie in (0, 1)")));
                }
                Ok(())
            }
        }
    }

    pub fn get(&self, hyper: Hyper) -> Result<f64> {
        match (*self, hyper) {
            (KernelParams::SquaredExponential { length_scale, .. }, Hyper::LengthScale) => {
                Ok(length_scale)
            }
            (KernelParams::Periodic { frequency, .. }, Hyper::Frequency) => Ok(frequency),
            (KernelParams::Periodic { width, .. }, Hyper::Width) => Ok(width),
            (KernelParams::Chebyshev { a, .. }, Hyper::ChebA) => Ok(a),
            (KernelParams::Chebyshev { b, .. }, Hyper::ChebB) => Ok(b),
            _ => Err(Error::UnknownParameter(hyper.to_string())),
        }
    }

    /// Copy with one hyperparameter replaced, validated.
    pub fn with(&self, hyper: Hyper, value: f64) -> Result<Self> {
        let mut p = *self;
        match (&mut p, hyper) {
            (KernelParams::SquaredExponential { length_scale, .. }, Hyper::LengthScale) => {
                *length_scale = value
            }
            (KernelParams::Periodic { frequency, .. }, Hyper::Frequency) => *frequency = value,
            (KernelParams::Periodic { width, .. }, Hyper::Width) => *width = value,
            (KernelParams::Chebyshev { a, .. }, Hyper::ChebA) => *a = value,
            (KernelParams::Chebyshev { b, .. }, Hyper::ChebB) => *b = value,
            _ => return Err(Error::UnknownParameter(hyper.to_string())),
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum RawParams {
    SquaredExponential {
        l_se: f64,
        #[serde(default = "default_alpha")]
        alpha_se: f64,
    },
    Periodic { f_pr: f64, w_pr: f64 },
    Chebyshev { a: f64, b: f64 },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA_SE
}

impl TryFrom<RawParams> for KernelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        match raw {
            RawParams::SquaredExponential { l_se, alpha_se } => {
                KernelParams::squared_exponential(l_se, alpha_se)
            }
            RawParams::Periodic { f_pr, w_pr } => KernelParams::periodic(f_pr, w_pr),
            RawParams::Chebyshev { a, b } => KernelParams::chebyshev(a, b),
        }
    }
}

impl From<KernelParams> for RawParams {
    fn from(p: KernelParams) -> Self {
        match p {
            KernelParams::SquaredExponential { length_scale, alpha } => {
                RawParams::SquaredExponential { l_se: length_scale, alpha_se: alpha }
            }
            KernelParams::Periodic { frequency, width } => {
                RawParams::Periodic { f_pr: frequency, w_pr: width }
            }
            KernelParams::Chebyshev { a, b } => RawParams::Chebyshev { a, b },
        }
    }
}

fn check_chebyshev_domain(x: f64) -> Result<()> {
    if x.is_finite() && x.abs() <= 1.0 + 1e-12 {
        Ok(())
    } else {
        Err(Error::Domain { value: x })
    }
}

struct ChebyshevParts {
    num: f64,
    den: f64,
    dnum_db: f64,
    dden_db: f64,
}

fn chebyshev_parts(b: f64, x: f64, y: f64) -> ChebyshevParts {
    let s = x * x + y * y;
    let p = x * y;
    let one_b2 = 1.0 - b * b;
    ChebyshevParts {
        num: b * one_b2 - 2.0 * b * s + (1.0 + 3.0 * b * b) * p,
        den: one_b2 * one_b2 + 4.0 * b * (b * s - (1.0 + b * b) * p),
        dnum_db: 1.0 - 3.0 * b * b - 2.0 * s + 6.0 * b * p,
        dden_db: -4.0 * b * one_b2 + 8.0 * b * s - 4.0 * (1.0 + 3.0 * b * b) * p,
    }
}

/// Exact closed-form kernel value `k(x, x2)`.
pub fn kernel_eval(params: &KernelParams, x: f64, x2: f64) -> Result<f64> {
    params.validate()?;
    Ok(match *params {
        KernelParams::SquaredExponential { length_scale, .. } => {
            let r = x - x2;
            (-(r * r) / (2.0 * length_scale * length_scale)).exp()
        }
        KernelParams::Periodic { frequency, width } => {
            let s = (frequency * (x - x2) / 2.0).sin();
            (-2.0 * s * s / (width * width)).exp()
        }
        KernelParams::Chebyshev { a, b } => {
            check_chebyshev_domain(x)?;
            check_chebyshev_domain(x2)?;
            let c = chebyshev_parts(b, x, x2);
            1.0 - a + 2.0 * a * (1.0 - b) * c.num / c.den
        }
    })
}

/// Analytic derivative of the closed-form kernel with respect to a kernel hyperparameter.
pub fn kernel_grad(params: &KernelParams, hyper: Hyper, x: f64, x2: f64) -> Result<f64> {
    let k = kernel_eval(params, x, x2)?;
    let r = x - x2;
    match (*params, hyper) {
        (KernelParams::SquaredExponential { length_scale: l, .. }, Hyper::LengthScale) => {
            Ok(k * r * r / (l * l * l))
        }
        (KernelParams::Periodic { frequency: f, width: w }, Hyper::Width) => {
            let s = (f * r / 2.0).sin();
            Ok(k * 4.0 * s * s / (w * w * w))
        }
        (KernelParams::Periodic { frequency: f, width: w }, Hyper::Frequency) => {
            let half = f * r / 2.0;
            Ok(-k * 2.0 * half.sin() * half.cos() * r / (w * w))
        }
        (KernelParams::Chebyshev { b, .. }, Hyper::ChebA) => {
            let c = chebyshev_parts(b, x, x2);
            Ok(-1.0 + 2.0 * (1.0 - b) * c.num / c.den)
        }
        (KernelParams::Chebyshev { a, b }, Hyper::ChebB) => {
            let c = chebyshev_parts(b, x, x2);
            let ratio = c.num / c.den;
            let dratio = (c.dnum_db * c.den - c.num * c.dden_db) / (c.den * c.den);
            Ok(2.0 * a * (-ratio + (1.0 - b) * dratio))
        }
        _ => Err(Error::UnknownParameter(hyper.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn se_examples() {
        let p = KernelParams::squared_exponential(0.2, 1.0).unwrap();
        assert_eq!(kernel_eval(&p, 0.7, 0.7).unwrap(), 1.0);
        let v = kernel_eval(&p, 0.0, 0.2).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn periodic_full_period_is_one() {
        let p = KernelParams::periodic(2.0, 0.4).unwrap();
        let v = kernel_eval(&p, 0.0, std::f64::consts::PI).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn chebyshev_symmetric_and_domain_checked() {
        let p = KernelParams::chebyshev(0.9, 0.9).unwrap();
        let a = kernel_eval(&p, 0.3, -0.5).unwrap();
        let b = kernel_eval(&p, -0.5, 0.3).unwrap();
        assert_eq!(a, b);
        assert!(matches!(kernel_eval(&p, 1.2, 0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn constraint_violations_rejected() {
        assert!(KernelParams::squared_exponential(0.0, 1.0).is_err());
        assert!(KernelParams::squared_exponential(0.1, -1.0).is_err());
        assert!(KernelParams::periodic(f64::NAN, 0.4).is_err());
        assert!(KernelParams::chebyshev(1.0, 0.5).is_ok());
        assert!(KernelParams::chebyshev(1.01, 0.5).is_err());
        assert!(KernelParams::chebyshev(0.5, 1.0).is_err());
        assert!(KernelParams::chebyshev(0.0, 0.5).is_err());
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("matern".parse::<KernelKind>().is_err());
        assert_eq!("chebyshev".parse::<KernelKind>().unwrap(), KernelKind::Chebyshev);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let p = KernelParams::squared_exponential(0.3, 0.8).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"l_se\":0.3"));
        let back: KernelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"kind":"chebyshev","a":0.5,"b":1.5}"#;
        assert!(serde_json::from_str::<KernelParams>(bad).is_err());
        let unknown = r#"{"kind":"matern","nu":1.5}"#;
        assert!(serde_json::from_str::<KernelParams>(unknown).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cases = [
            (KernelParams::squared_exponential(0.3, 1.0).unwrap(), Hyper::LengthScale),
            (KernelParams::periodic(2.0, 0.6).unwrap(), Hyper::Width),
            (KernelParams::periodic(2.0, 0.6).unwrap(), Hyper::Frequency),
            (KernelParams::chebyshev(0.7, 0.6).unwrap(), Hyper::ChebA),
            (KernelParams::chebyshev(0.7, 0.6).unwrap(), Hyper::ChebB),
        ];
        let pts = [(0.1, -0.4), (0.9, 0.85), (-0.7, 0.3), (0.0, 0.0)];
        for (p, h) in cases {
            for &(x, y) in &pts {
                let v = p.get(h).unwrap();
                let step = 1e-6 * v.max(1e-3);
                let up = kernel_eval(&p.with(h, v + step).unwrap(), x, y).unwrap();
                let dn = kernel_eval(&p.with(h, v - step).unwrap(), x, y).unwrap();
                let fd = (up - dn) / (2.0 * step);
                let an = kernel_grad(&p, h, x, y).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                    "{h} at ({x},{y}): fd {fd} analytic {an}"
                );
            }
        }
    }
}
