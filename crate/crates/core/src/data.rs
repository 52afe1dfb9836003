//! Seeded synthetic datasets: sums of sinusoids and correlated multi-output draws.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gp::Dataset;
use crate::kernel::{kernel_eval, KernelParams};
use crate::linalg::SpdFactor;
use crate::mercer::linspace;
use crate::multioutput::{CoregionalizationMatrix, MODataset, MONoise};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyMode {
    /// drawn from `coeff_range`
    #[default]
    Random,
    /// evenly spaced over `coeff_range`
    Even,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinusoidConfig {
    pub n: usize,
    pub x_range: (f64, f64),
    pub num_terms: usize,
    pub coeff_range: (f64, f64),
    pub noise_sd: f64,
    pub frequencies: FrequencyMode,
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        SinusoidConfig {
            n: 10_000,
            x_range: (-5.0, 5.0),
            num_terms: 10,
            coeff_range: (1.0, 10.0),
            noise_sd: 5f64.sqrt(),
            frequencies: FrequencyMode::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidTerm {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_true: Vec<f64>,
    pub terms: Vec<SinusoidTerm>,
    pub noise_sd: f64,
}

impl SinusoidData {
    /// `k`-th derivative of the noise-free signal.
    pub fn derivative_at(&self, k: usize, x: f64) -> f64 {
        let shift = k as f64 * std::f64::consts::FRAC_PI_2;
        self.terms
            .iter()
            .map(|t| t.amplitude * t.frequency.powi(k as i32) * (t.frequency * x + t.phase + shift).sin())
            .sum()
    }

    pub fn derivative(&self, k: usize, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.derivative_at(k, x)).collect()
    }

    pub fn truth(&self, xs: &[f64]) -> Vec<f64> {
        self.derivative(0, xs)
    }

    /// Training set with homoscedastic noise `noise_variance`.
    pub fn dataset(&self, noise_variance: f64) -> Result<Dataset> {
        Dataset::homoscedastic(self.x.clone(), self.y.clone(), noise_variance)
    }
}

/// `Y = Σ c_i sin(f_i x + φ_i) + ε` on an even grid over `x_range`.
pub fn gen_sinusoids(seed: u64, config: &SinusoidConfig) -> Result<SinusoidData> {
    let c = config;
    if c.n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    if !(c.x_range.0 < c.x_range.1) || !c.x_range.0.is_finite() || !c.x_range.1.is_finite() {
        return Err(invalid("x_range", "needs finite lo < hi"));
    }
    if !(c.coeff_range.0 <= c.coeff_range.1) {
        return Err(invalid("coeff_range", "needs lo <= hi"));
    }
    if !(c.noise_sd >= 0.0) || !c.noise_sd.is_finite() {
        return Err(invalid("noise_sd", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = c.coeff_range;
    let draw = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let amplitudes: Vec<f64> = (0..c.num_terms).map(|_| draw(&mut rng)).collect();
    let frequencies: Vec<f64> = match c.frequencies {
        FrequencyMode::Random => (0..c.num_terms).map(|_| draw(&mut rng)).collect(),
        FrequencyMode::Even => linspace(lo, hi, c.num_terms),
    };
    let phases: Vec<f64> = (0..c.num_terms).map(|_| draw(&mut rng)).collect();
    let terms: Vec<SinusoidTerm> = (0..c.num_terms)
        .map(|i| SinusoidTerm { amplitude: amplitudes[i], frequency: frequencies[i], phase: phases[i] })
        .collect();
    let x = linspace(c.x_range.0, c.x_range.1, c.n);
    let mut data = SinusoidData { x, y: Vec::new(), y_true: Vec::new(), terms, noise_sd: c.noise_sd };
    data.y_true = data.truth(&data.x);
    data.y = data
        .y_true
        .iter()
        .map(|&t| {
            let e: f64 = StandardNormal.sample(&mut rng);
            t + c.noise_sd * e
        })
        .collect();
    Ok(data)
}

pub const CORRELATED_MAX_NM: usize = 6000;

#[derive(Clone, Debug)]
pub struct CorrelatedData {
    pub dataset: MODataset,
    /// noise-free draw, output-major
    pub truth: Vec<f64>,
}

/// Draws `Y ~ N(0, K_f ⊗ K_XX + σ² I)` with an SE kernel on an even grid over (−1, 1).
///
/// `L_f ⊗ L_X` is the Cholesky factor of `K_f ⊗ K_XX`, so only the `N×N` factor is computed.
pub fn gen_correlated(seed: u64, n: usize, l_se: f64, kf: &DMatrix<f64>, noise_var: f64) -> Result<CorrelatedData> {
    let m = kf.nrows();
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    if n * m > CORRELATED_MAX_NM {
        return Err(Error::SizeGuard { what: "N·M for correlated sampling", size: n * m, limit: CORRELATED_MAX_NM });
    }
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(invalid("noise_var", "must be positive and finite"));
    }
    let lf = CoregionalizationMatrix::from_kf(kf)?;
    let params = KernelParams::squared_exponential(l_se, 1.0)?;
    // midpoints of N equal cells keep the grid inside the open interval
    let x: Vec<f64> = (0..n).map(|i| -1.0 + (2 * i + 1) as f64 / n as f64).collect();
    let kxx = DMatrix::from_fn(n, n, |i, j| kernel_eval(&params, x[i], x[j]).unwrap_or(0.0));
    let lx = SpdFactor::new(&kxx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    // vec(L_X Z L_fᵀ) = (L_f ⊗ L_X) vec(Z)
    let f = lx.l() * z * lf.l().transpose();
    let truth: Vec<f64> = f.as_slice().to_vec();
    let sd = noise_var.sqrt();
    let y: Vec<f64> = truth
        .iter()
        .map(|&t| {
            let e: f64 = StandardNormal.sample(&mut rng);
            t + sd * e
        })
        .collect();
    let noise = MONoise::Separable(DMatrix::identity(m, m) * noise_var);
    Ok(CorrelatedData { dataset: MODataset::new(x, y, m, None, noise)?, truth })
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt()
}
