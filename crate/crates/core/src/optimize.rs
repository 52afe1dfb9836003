//! Gradient ascent with backtracking over an unconstrained parameter vector.

use std::io::Write;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const LOGIT_EPS: f64 = 1e-6;

/// Map from an unconstrained coordinate to the constrained parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamTransform {
    Identity,
    /// positive values
    Log,
    /// values in (lo, hi)
    Logit { lo: f64, hi: f64 },
}

impl ParamTransform {
    /// (ε, 1], used for the Chebyshev `a`.
    pub fn unit_closed() -> Self {
        ParamTransform::Logit { lo: LOGIT_EPS, hi: 1.0 }
    }

    pub fn unit_open() -> Self {
        ParamTransform::Logit { lo: 0.0, hi: 1.0 }
    }

    pub fn forward(self, value: f64) -> Result<f64> {
        match self {
            ParamTransform::Identity => Ok(value),
            ParamTransform::Log => {
                if value > 0.0 && value.is_finite() {
                    Ok(value.ln())
                } else {
                    Err(invalid("param", format!("{value} must be positive")))
                }
            }
            ParamTransform::Logit { lo, hi } => {
                if !(value > lo && value <= hi) {
                    return Err(invalid("param", format!("{value} outside ({lo}, {hi}]")));
                }
                // a = 1 sits on the closed boundary; nudge it in by a relative ulp-scale amount.
                let v = value.min(hi - (hi - lo) * 1e-12);
                let p = (v - lo) / (hi - lo);
                Ok((p / (1.0 - p)).ln())
            }
        }
    }

    pub fn inverse(self, theta: f64) -> f64 {
        match self {
            ParamTransform::Identity => theta,
            ParamTransform::Log => theta.exp(),
            ParamTransform::Logit { lo, hi } => lo + (hi - lo) * sigmoid(theta),
        }
    }

    /// d value / d theta
    pub fn jacobian(self, theta: f64) -> f64 {
        match self {
            ParamTransform::Identity => 1.0,
            ParamTransform::Log => theta.exp(),
            ParamTransform::Logit { lo, hi } => {
                let s = sigmoid(theta);
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Ordered named scalars stored in unconstrained space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    names: Vec<String>,
    transforms: Vec<ParamTransform>,
    theta: Vec<f64>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64, transform: ParamTransform) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidParameter { name: "param", reason: format!("duplicate name {name}") });
        }
        self.theta.push(transform.forward(value)?);
        self.names.push(name);
        self.transforms.push(transform);
        Ok(self.theta.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transforms(&self) -> &[ParamTransform] {
        &self.transforms
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension(format!("theta has {} entries, expected {}", theta.len(), self.theta.len())));
        }
        Ok(ParamVector { theta, ..self.clone() })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, i: usize) -> f64 {
        self.transforms[i].inverse(self.theta[i])
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.index(name).map(|i| self.value(i)).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// Converts a gradient in constrained coordinates to unconstrained ones.
    pub fn chain(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter()
            .zip(self.transforms.iter().zip(&self.theta))
            .map(|(g, (t, th))| g * t.jacobian(*th))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    /// converged once |∇θ| ≤ grad_tol · max(1, |LML|)
    pub grad_tol: f64,
    pub step_shrink: f64,
    pub step_grow: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { max_iters: 200, initial_step: 1e-3, grad_tol: 1e-4, step_shrink: 0.5, step_grow: 1.5, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(invalid("initial_step", "must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", "must be positive"));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(invalid("step_shrink", "must lie in (0, 1)"));
        }
        if !(self.step_grow >= 1.0 && self.step_grow.is_finite()) {
            return Err(invalid("step_grow", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub lml: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    /// objective/gradient evaluations, including rejected proposals
    pub evaluations: usize,
}

impl TrainingTrace {
    pub fn final_lml(&self) -> Option<f64> {
        self.records.last().map(|r| r.lml)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["iter", "lml", "grad_norm", "step", "wall_time_s"])?;
        for r in &self.records {
            w.write_record(&[
                r.iter.to_string(),
                format!("{:e}", r.lml),
                format!("{:e}", r.grad_norm),
                format!("{:e}", r.step),
                format!("{:e}", r.wall_time_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row?;
            let f = |i: usize| -> Result<f64> {
                row.get(i)
                    .ok_or_else(|| Error::Parse(format!("trace row missing column {i}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))
            };
            records.push(TraceRecord { iter: f(0)? as usize, lml: f(1)?, grad_norm: f(2)?, step: f(3)?, wall_time_s: f(4)? });
        }
        Ok(TrainingTrace { records, converged: false, evaluations: 0 })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximizes `objective`, which returns the value and its gradient in constrained coordinates.
///
/// Record 0 is the initial point; each later record is an accepted step. An evaluation that
/// errors or is non-finite during line search counts as a rejection.
pub fn optimize<F>(mut objective: F, init: ParamVector, config: &OptimizerConfig) -> Result<(ParamVector, TrainingTrace)>
where
    F: FnMut(&ParamVector) -> Result<(f64, Vec<f64>)>,
{
    config.validate()?;
    let start = Instant::now();
    let (mut f, g) = objective(&init)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective or gradient at initial parameters".into()));
    }
    if g.len() != init.len() {
        return Err(Error::Dimension(format!("gradient has {} entries, expected {}", g.len(), init.len())));
    }
    let mut theta_grad = init.chain(&g);
    let mut current = init;
    let mut step = config.initial_step;
    let mut trace = TrainingTrace { records: Vec::new(), converged: false, evaluations: 1 };
    trace.records.push(TraceRecord { iter: 0, lml: f, grad_norm: norm(&theta_grad), step, wall_time_s: 0.0 });
    let min_step = config.initial_step * 1e-14;

    for iter in 1..=config.max_iters {
        let gn = norm(&theta_grad);
        if gn <= config.grad_tol * f.abs().max(1.0) {
            trace.converged = true;
            break;
        }
        let mut accepted = None;
        while step >= min_step {
            let proposal: Vec<f64> = current.theta().iter().zip(&theta_grad).map(|(t, g)| t + step * g).collect();
            let cand = current.with_theta(proposal)?;
            trace.evaluations += 1;
            match objective(&cand) {
                Ok((fc, gc)) if fc.is_finite() && gc.iter().all(|v| v.is_finite()) && fc > f => {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                Ok(_) => {}
                Err(e) => log::debug!("rejected proposal at step {step:e}: {e}"),
            }
            step *= config.step_shrink;
        }
        let Some((cand, fc, gc)) = accepted else {
            log::info!("step underflow after {} iterations", iter - 1);
            break;
        };
        current = cand;
        f = fc;
        theta_grad = current.chain(&gc);
        trace.records.push(TraceRecord {
            iter,
            lml: f,
            grad_norm: norm(&theta_grad),
            step,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        step *= config.step_grow;
    }
    if !trace.converged {
        trace.converged = norm(&theta_grad) <= config.grad_tol * f.abs().max(1.0);
    }
    Ok((current, trace))
}
