use famgp::exact::{exact_lml_and_grad, ExactGp, ExactSpec};
use famgp::mercer::linspace;
use famgp::{
    fit, lml_and_grads, log_marginal_likelihood, CovarianceMode, Dataset, FastStats, Hyper, KernelParams, ModelSpec,
    NoiseVariance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(seed: u64, n: usize, chebyshev: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n)
        .map(|_| if chebyshev { rng.random_range(-1.0..1.0) } else { rng.random_range(-3.0..2.0) })
        .collect();
    let y: Vec<f64> = x.iter().map(|&v| (2.0 * v).sin() + 0.3 * v + 0.1 * rng.random::<f64>()).collect();
    Dataset::homoscedastic(x, y, 0.05).unwrap()
}

fn specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(KernelParams::squared_exponential(0.3, 1.0).unwrap(), 30).with_signal_variance(1.7),
        ModelSpec::new(KernelParams::periodic(2.5, 0.8).unwrap(), 21).with_signal_variance(0.8),
        ModelSpec::new(KernelParams::chebyshev(0.9, 0.7).unwrap(), 25).with_signal_variance(1.2),
    ]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn famgp_matches_dense_reconstructed_gp() {
    for spec in specs() {
        let ds = data(7, 60, spec.params.kind() == famgp::KernelKind::Chebyshev);
        let model = fit(&ds, &spec).unwrap();
        let exact =
            ExactGp::fit(&ds, ExactSpec::reconstructed(spec.params, spec.n).with_signal_variance(spec.signal_variance))
                .unwrap();
        let xs = linspace(ds.x.iter().cloned().fold(f64::INFINITY, f64::min), 0.9, 17);
        let a = model.predict(&xs, CovarianceMode::Full).unwrap();
        let b = exact.predict(&xs, CovarianceMode::Full).unwrap();
        let mean_err = (&a.mean - &b.mean).abs().max() / b.mean.abs().max();
        let cov_err = (a.covariance.unwrap() - b.covariance.as_ref().unwrap()).abs().max()
            / b.covariance.unwrap().abs().max();
        assert!(mean_err < 1e-8, "{:?} mean {mean_err}", spec.params.kind());
        assert!(cov_err < 1e-8, "{:?} cov {cov_err}", spec.params.kind());
        let l1 = log_marginal_likelihood(&ds, &spec).unwrap();
        let (l2, _) = exact_lml_and_grad(
            &ds,
            ExactSpec::reconstructed(spec.params, spec.n).with_signal_variance(spec.signal_variance),
            &[],
        )
        .unwrap();
        assert!(rel(l1, l2) < 1e-8, "lml {l1} vs {l2}");
    }
}

#[test]
fn general_gradients_match_finite_differences() {
    for spec in specs() {
        let ds = data(11, 50, spec.params.kind() == famgp::KernelKind::Chebyshev);
        let mut hypers: Vec<Hyper> = spec.params.kind().hyperparameters().to_vec();
        hypers.push(Hyper::SignalVariance);
        hypers.push(Hyper::NoiseVariance);
        let (_, grads) = lml_and_grads(&ds, &spec, &hypers).unwrap();
        for (&h, &g) in hypers.iter().zip(&grads) {
            let lml_at = |v: f64| {
                let (s, d) = match h {
                    Hyper::SignalVariance => (spec.with_signal_variance(v), ds.clone()),
                    Hyper::NoiseVariance => (spec, ds.with_noise(v).unwrap()),
                    _ => (ModelSpec { params: spec.params.with(h, v).unwrap(), ..spec }, ds.clone()),
                };
                log_marginal_likelihood(&d, &s).unwrap()
            };
            let v = match h {
                Hyper::SignalVariance => spec.signal_variance,
                Hyper::NoiseVariance => 0.05,
                _ => spec.params.get(h).unwrap(),
            };
            let step = 1e-5 * v;
            let fd = (lml_at(v + step) - lml_at(v - step)) / (2.0 * step);
            assert!(rel(g, fd) < 1e-5, "{:?} {h}: analytic {g} fd {fd}", spec.params.kind());
        }
        let exact = ExactSpec::reconstructed(spec.params, spec.n).with_signal_variance(spec.signal_variance);
        let (_, eg) = exact_lml_and_grad(&ds, exact, &hypers).unwrap();
        for (a, b) in grads.iter().zip(&eg) {
            assert!(rel(*a, *b) < 1e-7, "famgp {a} vs dense {b}");
        }
    }
}

#[test]
fn fast_path_equals_general_path() {
    let ds = data(3, 80, true);
    let spec = ModelSpec::new(KernelParams::chebyshev(0.7, 0.6).unwrap(), 30).with_signal_variance(1.3);
    let hypers = [Hyper::ChebA, Hyper::ChebB, Hyper::SignalVariance, Hyper::NoiseVariance];
    let fast = FastStats::new(&ds, &spec).unwrap();
    let (lf, gf) = fast.evaluate(&spec, None, &hypers).unwrap();
    let (lg, gg) = lml_and_grads(&ds, &spec, &hypers).unwrap();
    assert!(rel(lf, lg) < 1e-10);
    for (a, b) in gf.iter().zip(&gg) {
        assert!(rel(*a, *b) < 1e-8, "{a} vs {b}");
    }
    // SE length scale touches the eigenfunctions.
    let se = ModelSpec::new(KernelParams::squared_exponential(0.3, 1.0).unwrap(), 10);
    let fast_se = FastStats::new(&ds, &se).unwrap();
    assert!(matches!(fast_se.lml_grad_fast(&se, Hyper::LengthScale), Err(famgp::Error::NotEigenvalueOnly(_))));
}

#[test]
fn per_point_noise_matches_dense() {
    let base = data(5, 40, false);
    let noise: Vec<f64> = (0..40).map(|i| 0.02 + 0.01 * (i % 5) as f64).collect();
    let ds = Dataset::new(base.x.clone(), base.y.clone(), NoiseVariance::PerPoint(noise)).unwrap();
    let spec = specs()[0];
    let l1 = log_marginal_likelihood(&ds, &spec).unwrap();
    let exact = ExactSpec::reconstructed(spec.params, spec.n).with_signal_variance(spec.signal_variance);
    let (l2, _) = exact_lml_and_grad(&ds, exact, &[]).unwrap();
    assert!(rel(l1, l2) < 1e-8, "{l1} vs {l2}");
}
