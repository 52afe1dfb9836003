use famgp::data::{gen_sinusoids, SinusoidConfig};
use famgp::train::{train_fast_path, train_general};
use famgp::*;
use proptest::prelude::*;

#[test]
fn climbs_to_the_top_of_a_quadratic_bowl() {
    let mut pv = ParamVector::new();
    pv.push("u", 3.0, ParamTransform::Identity).unwrap();
    pv.push("v", 0.5, ParamTransform::Log).unwrap();
    let config = OptimizerConfig { max_iters: 5000, initial_step: 0.1, grad_tol: 1e-10, ..Default::default() };
    let (best, trace) = optimize(
        |p| {
            let (u, v) = (p.value(0), p.value(1));
            Ok((-(u + 1.0).powi(2) - (v - 2.0).powi(2), vec![-2.0 * (u + 1.0), -2.0 * (v - 2.0)]))
        },
        pv,
        &config,
    )
    .unwrap();
    assert!(trace.converged);
    assert!((best.get("u").unwrap() + 1.0).abs() < 1e-6);
    assert!((best.get("v").unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(trace.records[0].iter, 0);
    assert!(trace.records.windows(2).all(|w| w[1].lml > w[0].lml));
}

#[test]
fn max_iters_bounds_accepted_steps() {
    let mut pv = ParamVector::new();
    pv.push("u", 10.0, ParamTransform::Identity).unwrap();
    let config = OptimizerConfig { max_iters: 3, initial_step: 1e-3, grad_tol: 1e-12, ..Default::default() };
    let (_, trace) = optimize(|p| Ok((-p.value(0).powi(2), vec![-2.0 * p.value(0)])), pv, &config).unwrap();
    assert!(!trace.converged);
    assert_eq!(trace.records.len(), 4);
}

#[test]
fn non_finite_start_is_rejected() {
    let mut pv = ParamVector::new();
    pv.push("u", 1.0, ParamTransform::Identity).unwrap();
    let r = optimize(|_| Ok((f64::NAN, vec![0.0])), pv, &OptimizerConfig::default());
    assert!(r.is_err());
}

#[test]
fn fast_and_general_paths_follow_the_same_trace() {
    let d = gen_sinusoids(5, &SinusoidConfig { n: 1500, ..Default::default() }).unwrap();
    let ds = d.dataset(5.0).unwrap();
    let spec = ModelSpec::new(KernelParams::chebyshev(0.6, 0.7).unwrap(), 40);
    let active = [Hyper::ChebA, Hyper::ChebB, Hyper::SignalVariance];
    let config = OptimizerConfig { max_iters: 60, ..Default::default() };
    let fast = train_fast_path(&ds, &spec, &active, &config).unwrap();
    let general = train_general(&ds, &spec, &active, &config).unwrap();
    assert_eq!(fast.trace.records.len(), general.trace.records.len());
    for (a, b) in fast.trace.records.iter().zip(&general.trace.records) {
        assert!((a.lml - b.lml).abs() <= 1e-8 * a.lml.abs().max(1.0), "{} vs {}", a.lml, b.lml);
    }
    for (a, b) in fast.params.values().iter().zip(general.params.values()) {
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
    }
}

#[test]
fn empty_dataset_is_an_error() {
    let spec = ModelSpec::new(KernelParams::chebyshev(0.9, 0.9).unwrap(), 10);
    assert!(matches!(Dataset::homoscedastic(vec![], vec![], 1.0), Err(Error::EmptyDataset)));
    let ds = Dataset { x: vec![], y: vec![], noise: NoiseVariance::Homoscedastic(1.0) };
    for path in [TrainPath::Fast, TrainPath::General] {
        assert!(matches!(train(&ds, &spec, &[Hyper::ChebA], path, &OptimizerConfig::default()), Err(Error::EmptyDataset)));
    }
}

#[test]
fn auto_path_picks_the_cached_route_only_for_eigenvalue_parameters() {
    let d = gen_sinusoids(1, &SinusoidConfig { n: 300, ..Default::default() }).unwrap();
    let ds = d.dataset(5.0).unwrap();
    let config = OptimizerConfig { max_iters: 5, ..Default::default() };
    let cheb = ModelSpec::new(KernelParams::chebyshev(0.9, 0.9).unwrap(), 20);
    assert!(train(&ds, &cheb, &[Hyper::ChebA, Hyper::NoiseVariance], TrainPath::Auto, &config).unwrap().fast_path);
    let se = ModelSpec::new(KernelParams::squared_exponential(0.3, 1.0).unwrap(), 20);
    assert!(!train(&ds, &se, &[Hyper::LengthScale], TrainPath::Auto, &config).unwrap().fast_path);
    assert!(matches!(train(&ds, &se, &[Hyper::LengthScale], TrainPath::Fast, &config), Err(Error::NotEigenvalueOnly(_))));
}

fn transform() -> impl Strategy<Value = (ParamTransform, f64)> {
    prop_oneof![
        (-1e3..1e3f64).prop_map(|v| (ParamTransform::Identity, v)),
        (1e-6..1e6f64).prop_map(|v| (ParamTransform::Log, v)),
        (0.001..0.999f64).prop_map(|v| (ParamTransform::unit_open(), v)),
        (0.01..1.0f64).prop_map(|v| (ParamTransform::unit_closed(), v)),
    ]
}

proptest! {
    #[test]
    fn param_vector_round_trips(entries in prop::collection::vec(transform(), 1..6)) {
        let mut pv = ParamVector::new();
        for (i, (t, v)) in entries.iter().enumerate() {
            pv.push(format!("p{i}"), *v, *t).unwrap();
        }
        let back = pv.with_theta(pv.theta().to_vec()).unwrap();
        for ((_, v), got) in entries.iter().zip(back.values()) {
            prop_assert!((got - v).abs() <= 1e-12 * v.abs().max(1.0), "{} vs {}", got, v);
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences((t, v) in transform()) {
        let mut pv = ParamVector::new();
        pv.push("p", v, t).unwrap();
        let th = pv.theta()[0];
        let h = 1e-6 * th.abs().max(1.0);
        let up = pv.with_theta(vec![th + h]).unwrap().value(0);
        let down = pv.with_theta(vec![th - h]).unwrap().value(0);
        let fd = (up - down) / (2.0 * h);
        let jac = pv.chain(&[1.0])[0];
        prop_assert!((fd - jac).abs() <= 1e-5 * jac.abs().max(1e-8), "{} vs {}", fd, jac);
    }
}
