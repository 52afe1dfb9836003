use famgp::mercer::linspace;
use famgp::{KernelParams, MercerBasis};

fn bases() -> Vec<MercerBasis> {
    vec![
        MercerBasis::new(KernelParams::squared_exponential(0.3, 1.0).unwrap(), 25).unwrap(),
        MercerBasis::new(KernelParams::squared_exponential(0.8, 1.7).unwrap(), 12).unwrap(),
        MercerBasis::new(KernelParams::periodic(3.0, 0.6).unwrap(), 11).unwrap(),
        MercerBasis::new(KernelParams::chebyshev(0.8, 0.7).unwrap(), 15).unwrap(),
    ]
}

#[test]
fn input_derivatives_match_finite_differences() {
    let xs = linspace(-0.9, 0.9, 13);
    let h = 1e-5;
    for basis in bases() {
        for k in 1..=3 {
            let d = basis.basis_derivative(&xs, k).unwrap().values;
            let order_below = |x: f64| {
                if k == 1 {
                    basis.basis_matrix(&[x]).unwrap().values
                } else {
                    basis.basis_derivative(&[x], k - 1).unwrap().values
                }
            };
            for (i, &x) in xs.iter().enumerate() {
                let fd = (order_below(x + h) - order_below(x - h)) / (2.0 * h);
                for j in 0..basis.rank() {
                    let scale = 1.0 + d[(i, j)].abs();
                    assert!(
                        (fd[(0, j)] - d[(i, j)]).abs() / scale < 1e-5,
                        "{} k={k} x={x} slot={j}: fd {} analytic {}",
                        basis.kind(),
                        fd[(0, j)],
                        d[(i, j)]
                    );
                }
            }
        }
    }
}

#[test]
fn hyperparameter_gradients_match_finite_differences() {
    let xs = linspace(-0.95, 0.95, 9);
    for basis in bases() {
        let params = *basis.params();
        for &hyper in params.kind().hyperparameters() {
            let v = params.get(hyper).unwrap();
            let h = 1e-6 * v.max(1e-3);
            let plus = MercerBasis::new(params.with(hyper, v + h).unwrap(), basis.requested_order()).unwrap();
            let minus = MercerBasis::new(params.with(hyper, v - h).unwrap(), basis.requested_order()).unwrap();
            let lg = basis.lambda_grad(hyper).unwrap();
            for j in 0..basis.rank() {
                let fd = (plus.eigenvalues()[j] - minus.eigenvalues()[j]) / (2.0 * h);
                let scale = 1e-12 + lg[j].abs().max(fd.abs());
                assert!((fd - lg[j]).abs() / scale < 1e-5, "{hyper} lambda slot {j}: fd {fd} vs {}", lg[j]);
            }
            let pg = basis.basis_matrix_grad(&xs, hyper).unwrap().values;
            let fd = (plus.basis_matrix(&xs).unwrap().values - minus.basis_matrix(&xs).unwrap().values) / (2.0 * h);
            for (a, b) in pg.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()), "{hyper} phi: {a} vs {b}");
            }
        }
    }
}

#[test]
fn se_reconstruction_improves_with_order() {
    let xs = linspace(-1.0, 1.0, 60);
    let params = KernelParams::squared_exponential(0.2, 1.0).unwrap();
    let mut last = f64::INFINITY;
    for n in [5, 10, 20, 40] {
        let mad = famgp::mercer::reconstruction_mad(&MercerBasis::new(params, n).unwrap(), &xs).unwrap();
        assert!(mad < last);
        last = mad;
    }
    assert!(last < 1e-4, "{last}");
}

#[test]
fn chebyshev_reconstruction_converges() {
    let xs = linspace(-1.0, 1.0, 50);
    let b = MercerBasis::new(KernelParams::chebyshev(0.9, 0.5).unwrap(), 80).unwrap();
    assert!(famgp::mercer::reconstruction_mad(&b, &xs).unwrap() < 1e-10);
}
