use famgp::exact::{exact_mo_fit_predict, exact_mo_lml_and_grads, ExactMoGp, KernelSource};
use famgp::mercer::linspace;
use famgp::multioutput::{mo_log_marginal_likelihood, SeparableInverse};
use famgp::{
    commutation_matrix, fit, kf_grad, mo_fit, mo_inverse_separable, mo_lml_and_grads, CoregionalizationMatrix,
    CovarianceMode, Dataset, Hyper, KernelParams, MODataset, MONoise, MercerBasis, ModelSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(m: usize, rng: &mut ChaCha8Rng, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(m, m) * ridge
}

fn mo_data(seed: u64, n: usize, m: usize, noise: MONoise) -> MODataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = Vec::new();
    for k in 0..m {
        for &v in &x {
            y.push(((k + 1) as f64 * 2.0 * v).sin() * if k % 2 == 0 { 1.0 } else { -1.0 } + 0.1 * rng.random::<f64>());
        }
    }
    MODataset::new(x, y, m, None, noise).unwrap()
}

fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max()
}

fn kf2() -> CoregionalizationMatrix {
    CoregionalizationMatrix::from_kf(&DMatrix::from_row_slice(2, 2, &[1.3, -0.9, -0.9, 1.1])).unwrap()
}

#[test]
fn mo_fit_matches_dense_kronecker_oracle() {
    let params = KernelParams::squared_exponential(0.4, 1.0).unwrap();
    let s = DMatrix::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.08]);
    let ds = mo_data(1, 40, 2, MONoise::Separable(s));
    let kf = kf2();
    let xs = linspace(-0.9, 0.9, 11);
    for masked in [false, true] {
        let d = if masked { ds.mask_output(1, |x| x > 0.3).unwrap() } else { ds.clone() };
        let model = mo_fit(&d, &params, 5, &kf).unwrap();
        let a = model.predict(&xs, &[0, 1], CovarianceMode::Full).unwrap();
        let b = exact_mo_fit_predict(&d, params, KernelSource::Reconstructed { n: 5 }, &kf, &xs, &[0, 1], CovarianceMode::Full)
            .unwrap();
        let me = (&a.mean - &b.mean).abs().max() / b.mean.abs().max();
        assert!(me < 1e-8, "masked={masked} mean {me}");
        assert!(rel_mat(a.covariance.as_ref().unwrap(), b.covariance.as_ref().unwrap()) < 1e-8);
        let l1 = mo_log_marginal_likelihood(&d, &params, 5, &kf).unwrap();
        let l2 = ExactMoGp::fit(&d, params, KernelSource::Reconstructed { n: 5 }, &kf).unwrap().lml();
        assert!((l1 - l2).abs() / l2.abs() < 1e-8);
    }
}

#[test]
fn full_noise_path_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 20;
    let sigma = random_spd(2 * n, &mut rng, 0.05) * 0.05;
    let ds = mo_data(2, n, 2, MONoise::Full(sigma));
    let params = KernelParams::chebyshev(0.8, 0.6).unwrap();
    let kf = kf2();
    let xs = linspace(-0.5, 0.5, 5);
    let a = mo_fit(&ds, &params, 8, &kf).unwrap().predict(&xs, &[1], CovarianceMode::Diagonal).unwrap();
    let b = exact_mo_fit_predict(&ds, params, KernelSource::Reconstructed { n: 8 }, &kf, &xs, &[1], CovarianceMode::Diagonal)
        .unwrap();
    assert!((&a.mean - &b.mean).abs().max() / b.mean.abs().max() < 1e-8);
    assert!((a.variance.unwrap() - b.variance.unwrap()).abs().max() < 1e-9);
}

#[test]
fn separable_inverse_matches_direct_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in [1usize, 2, 3] {
        let s = random_spd(m, &mut rng, 0.1);
        let kf = CoregionalizationMatrix::from_kf(&random_spd(m, &mut rng, 0.2)).unwrap();
        let basis = MercerBasis::new(KernelParams::squared_exponential(0.5, 1.0).unwrap(), 5).unwrap();
        let x = linspace(-1.0, 1.0, 30);
        let phi = basis.basis_matrix(&x).unwrap().values;
        let lam = basis.eigenvalues();
        let inv = mo_inverse_separable(&s, &kf, &phi, lam).unwrap();
        let direct = (kf.kf().try_inverse().unwrap().kronecker(&DMatrix::from_diagonal(&lam.map(|v| 1.0 / v)))
            + s.clone().try_inverse().unwrap().kronecker(&phi.tr_mul(&phi)))
        .try_inverse()
        .unwrap();
        assert!(rel_mat(&inv.to_dense(), &direct) < 1e-8, "m={m}");
        let v = DVector::from_fn(5 * m, |i, _| (i as f64).cos());
        assert!((inv.apply(&v) - &direct * &v).abs().max() / (&direct * &v).abs().max() < 1e-8);
        assert!(inv.middle_factor().iter().all(|&x| x >= 1.0));
        // U_a diagonalizes S⁻¹K_f.
        let ua = inv.u_a();
        let lhs = s.clone().try_inverse().unwrap() * kf.kf() * &ua;
        let rhs = &ua * DMatrix::from_diagonal(&inv.da);
        assert!((lhs - rhs).abs().max() < 1e-8);
    }
}

#[test]
fn single_output_separable_reduces_to_scalar_path() {
    let s = DMatrix::from_element(1, 1, 0.07);
    let basis = MercerBasis::new(KernelParams::squared_exponential(0.5, 1.0).unwrap(), 6).unwrap();
    let x = linspace(-1.0, 1.0, 25);
    let phi = basis.basis_matrix(&x).unwrap().values;
    let inv = SeparableInverse::from_gram(&s, &DMatrix::from_element(1, 1, 1.0), &phi.tr_mul(&phi), basis.eigenvalues())
        .unwrap();
    let lam_bar = DMatrix::from_diagonal(&basis.eigenvalues().map(|v| 1.0 / v)) + phi.tr_mul(&phi) / 0.07;
    assert!(rel_mat(&inv.to_dense(), &lam_bar.try_inverse().unwrap()) < 1e-10);
}

#[test]
fn identity_kf_matches_independent_fits() {
    let params = KernelParams::periodic(2.0, 0.7).unwrap();
    let ds = mo_data(3, 50, 2, MONoise::per_output(&[0.04, 0.09]));
    let model = mo_fit(&ds, &params, 9, &CoregionalizationMatrix::identity(2)).unwrap();
    let xs = linspace(-1.0, 1.0, 13);
    let joint = model.predict(&xs, &[0, 1], CovarianceMode::Diagonal).unwrap();
    for (k, var) in [(0usize, 0.04), (1, 0.09)] {
        let single = Dataset::homoscedastic(ds.x.clone(), ds.y[k * 50..(k + 1) * 50].to_vec(), var).unwrap();
        let p = fit(&single, &ModelSpec::new(params, 9)).unwrap().predict(&xs, CovarianceMode::Diagonal).unwrap();
        let jm = joint.mean.rows(k * 13, 13);
        assert!((&p.mean - jm).abs().max() / p.mean.abs().max() < 1e-10);
        let jv = joint.variance.as_ref().unwrap().rows(k * 13, 13);
        assert!((p.variance.unwrap() - jv).abs().max() < 1e-10);
    }
}

#[test]
fn gradients_match_finite_differences_and_dense() {
    let params = KernelParams::squared_exponential(0.35, 1.0).unwrap();
    let ds = mo_data(5, 60, 2, MONoise::per_output(&[0.05, 0.03])).mask_output(1, |x| x < -0.5).unwrap();
    let kf = kf2();
    let n = 10;
    let g = mo_lml_and_grads(&ds, &params, n, &kf, &[Hyper::LengthScale], true).unwrap();
    let lml = |p: &KernelParams, k: &CoregionalizationMatrix, d: &MODataset| mo_log_marginal_likelihood(d, p, n, k).unwrap();
    let h = 1e-6;
    let fd_l = (lml(&params.with(Hyper::LengthScale, 0.35 + h).unwrap(), &kf, &ds)
        - lml(&params.with(Hyper::LengthScale, 0.35 - h).unwrap(), &kf, &ds))
        / (2.0 * h);
    assert!((g.kernel[0] - fd_l).abs() / fd_l.abs() < 1e-5, "{} vs {fd_l}", g.kernel[0]);
    for i in 0..2 {
        for j in 0..=i {
            let bump = |d: f64| {
                let mut l = kf.l().clone();
                l[(i, j)] += d;
                CoregionalizationMatrix::from_cholesky(l).unwrap()
            };
            let fd = (lml(&params, &bump(h), &ds) - lml(&params, &bump(-h), &ds)) / (2.0 * h);
            assert!((g.l[(i, j)] - fd).abs() / fd.abs().max(1e-8) < 1e-5, "L[{i},{j}] {} vs {fd}", g.l[(i, j)]);
        }
    }
    for k in 0..2 {
        let mut v = [0.05, 0.03];
        v[k] += h;
        let up = lml(&params, &kf, &ds.with_noise(MONoise::per_output(&v)).unwrap());
        v[k] -= 2.0 * h;
        let down = lml(&params, &kf, &ds.with_noise(MONoise::per_output(&v)).unwrap());
        let fd = (up - down) / (2.0 * h);
        assert!((g.noise[k] - fd).abs() / fd.abs() < 1e-5, "noise {k}: {} vs {fd}", g.noise[k]);
    }
    let (l2, eg, el) =
        exact_mo_lml_and_grads(&ds, params, KernelSource::Reconstructed { n }, &kf, &[Hyper::LengthScale]).unwrap();
    assert!((g.lml - l2).abs() / l2.abs() < 1e-8);
    assert!((g.kernel[0] - eg[0]).abs() / eg[0].abs() < 1e-7);
    assert!(rel_mat(&g.l, &el) < 1e-7);
    assert_eq!(kf_grad(&ds, &params, n, &kf).unwrap(), g.l);
}

#[test]
fn kf_gradient_agrees_with_commutation_identity() {
    // vec(∂LML/∂L) = lower part of (I + T)(L ⊗ I)ᵀ-contracted vec(Γ).
    let params = KernelParams::chebyshev(0.8, 0.5).unwrap();
    let ds = mo_data(8, 30, 3, MONoise::per_output(&[0.05, 0.05, 0.05]));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kf = CoregionalizationMatrix::from_kf(&random_spd(3, &mut rng, 0.3)).unwrap();
    let g = mo_lml_and_grads(&ds, &params, 6, &kf, &[], false).unwrap();
    let m = 3;
    let t = commutation_matrix(m);
    let d_kf_d_l = (DMatrix::identity(m * m, m * m) + &t) * kf.l().kronecker(&DMatrix::identity(m, m));
    let vec_gamma = DVector::from_column_slice(g.kf.as_slice());
    let vec_gl = d_kf_d_l.tr_mul(&vec_gamma);
    for j in 0..m {
        for i in j..m {
            assert!((vec_gl[j * m + i] - g.l[(i, j)]).abs() < 1e-9 * g.l.abs().max().max(1.0));
        }
    }
}

#[test]
fn commutation_matrix_properties() {
    assert_eq!(commutation_matrix(1), DMatrix::from_element(1, 1, 1.0));
    let t2 = commutation_matrix(2);
    let expect = DMatrix::from_row_slice(4, 4, &[1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 1.]);
    assert_eq!(t2, expect);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in 1..=6 {
        let t = commutation_matrix(m);
        assert_eq!(&t * &t, DMatrix::identity(m * m, m * m));
        for r in 0..m * m {
            assert_eq!(t.row(r).iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(t.column(r).iter().filter(|&&v| v == 1.0).count(), 1);
            assert!(t.row(r).iter().all(|&v| v == 0.0 || v == 1.0));
        }
        let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>());
        let va = DVector::from_column_slice(a.as_slice());
        let vat = DVector::from_column_slice(a.transpose().as_slice());
        assert_eq!(&t * va, vat);
    }
}
