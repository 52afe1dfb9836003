//! Browser bindings: generate noisy sinusoids, fit or train a model, and plot derivatives.

use famgp::data::{gen_sinusoids, SinusoidConfig, SinusoidData};
use famgp::mercer::linspace;
use famgp::train::{default_init, train};
use famgp::{fit, CovarianceMode, Dataset, FittedModel, Hyper, KernelKind, KernelParams, OptimizerConfig, TrainPath};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Points<'a> {
    x: &'a [f64],
    y: &'a [f64],
    truth: &'a [f64],
}

#[derive(Serialize)]
struct FitSummary {
    kernel: KernelKind,
    n: usize,
    /// kernel parameters in the data's own units
    params: KernelParams,
    signal_variance: f64,
    noise_variance: f64,
    lml: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct Curve {
    order: usize,
    x: Vec<f64>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    truth: Vec<f64>,
    rmse: f64,
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    data: SinusoidData,
    dataset: Dataset,
    model: Option<FittedModel>,
}

#[wasm_bindgen]
impl Demo {
    /// Draws `count` noisy samples of a random sum of sinusoids over [−5, 5].
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, count: usize, noise_sd: f64) -> Result<Demo, JsError> {
        let data = gen_sinusoids(seed, &SinusoidConfig { n: count, noise_sd, ..Default::default() }).map_err(js_err)?;
        let dataset = data.dataset(noise_sd * noise_sd).map_err(js_err)?;
        Ok(Demo { data, dataset, model: None })
    }

    /// JSON `{x, y, truth}` of the generated samples.
    pub fn points(&self) -> String {
        serde_json::to_string(&Points { x: &self.data.x, y: &self.data.y, truth: &self.data.y_true }).unwrap_or_default()
    }

    /// Fits with the default parameters of `kernel`; with `iterations > 0` first trains the
    /// kernel parameters and signal variance by gradient ascent. Returns a JSON summary.
    pub fn fit(&mut self, kernel: &str, n: usize, iterations: usize) -> Result<String, JsError> {
        let kind: KernelKind = kernel.parse().map_err(js_err)?;
        let (spec, _) = default_init(kind, n, &self.data.y);
        let noise_variance = self.data.noise_sd * self.data.noise_sd;
        let (model, spec, lml, iters, converged) = if iterations == 0 {
            let model = fit(&self.dataset, &spec).map_err(js_err)?;
            let lml = famgp::log_marginal_likelihood(&self.dataset, &spec).map_err(js_err)?;
            (model, spec, lml, 0, false)
        } else {
            let mut active = kind.hyperparameters().to_vec();
            active.push(Hyper::SignalVariance);
            let config = OptimizerConfig { max_iters: iterations, grad_tol: 1e-7, ..Default::default() };
            let t = train(&self.dataset, &spec, &active, TrainPath::Auto, &config).map_err(js_err)?;
            let lml = t.trace.final_lml().unwrap_or(f64::NAN);
            (t.model, t.spec, lml, t.trace.records.len() - 1, t.trace.converged)
        };
        let summary = FitSummary {
            kernel: kind,
            n,
            params: model.transform().params_to_raw(spec.params),
            signal_variance: spec.signal_variance,
            noise_variance,
            lml,
            iterations: iters,
            converged,
        };
        self.model = Some(model);
        serde_json::to_string(&summary).map_err(js_err)
    }

    /// JSON curve of the `order`-th derivative of the posterior over an even grid of `count`
    /// points, with marginal standard deviations and the true derivative.
    pub fn curve(&self, order: usize, count: usize) -> Result<String, JsError> {
        let model = self.model.as_ref().ok_or_else(|| JsError::new("fit a model first"))?;
        let x = linspace(-5.0, 5.0, count.max(2));
        let post = match order {
            0 => model.predict(&x, CovarianceMode::Diagonal),
            k => model.predict_derivative(&x, k, CovarianceMode::Diagonal),
        }
        .map_err(js_err)?;
        let mean: Vec<f64> = post.mean.iter().copied().collect();
        let sd = post.variance.map(|v| v.iter().map(|s| s.max(0.0).sqrt()).collect()).unwrap_or_default();
        let truth = self.data.derivative(order, &x);
        let rmse = famgp::data::rmse(&mean, &truth);
        serde_json::to_string(&Curve { order, x, mean, sd, truth, rmse }).map_err(js_err)
    }
}
