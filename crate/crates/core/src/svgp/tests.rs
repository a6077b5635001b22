use super::*;
use crate::linalg::cholesky;
use approx::assert_abs_diff_eq;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverse and log-determinant by Gauss-Jordan elimination with partial pivoting.
fn gj_inverse_logdet(a: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        if piv != col {
            for j in 0..n {
                m.swap([piv, j], [col, j]);
                inv.swap([piv, j], [col, j]);
            }
        }
        let p = m[[col, col]];
        logdet += p.abs().ln();
        for j in 0..n {
            m[[col, j]] /= p;
            inv[[col, j]] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[[i, col]];
                for j in 0..n {
                    m[[i, j]] -= f * m[[col, j]];
                    inv[[i, j]] -= f * inv[[col, j]];
                }
            }
        }
    }
    (inv, logdet)
}

struct ExactGp {
    post_mean: Array1<f64>,
    post_cov: Array2<f64>,
    lml: f64,
    c_inv: Array2<f64>,
}

fn exact_gp(kernel: &Kernel, x: &Array2<f64>, y: &Array1<f64>, noise: f64) -> ExactGp {
    let n = x.nrows();
    let kxx = Array2::from_shape_fn((n, n), |(i, j)| kernel.eval(&x.row(i), &x.row(j)).unwrap());
    let c = &kxx + &(Array2::<f64>::eye(n) * noise);
    let (c_inv, logdet) = gj_inverse_logdet(&c);
    let alpha = c_inv.dot(y);
    let lml = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * PI).ln();
    let post_mean = kxx.dot(&alpha);
    let post_cov = &kxx - &kxx.dot(&c_inv).dot(&kxx);
    ExactGp {
        post_mean,
        post_cov,
        lml,
        c_inv,
    }
}

fn toy_1d() -> (Array2<f64>, Array1<f64>) {
    let xs: Vec<f64> = (0..12).map(|i| -3.0 + 0.5 * i as f64 + 0.1 * (i as f64).sin()).collect();
    let x = Array2::from_shape_vec((12, 1), xs.clone()).unwrap();
    let y = Array1::from_iter(xs.iter().map(|v| v.sin() + 0.3 * v));
    (x, y)
}

fn exact_equivalent(kind: KernelKind) -> (SvgpOutput, ExactGp, Array2<f64>, Array1<f64>) {
    let (x, y) = toy_1d();
    let kernel = Kernel::new(kind, 1.3, vec![0.9]).unwrap();
    let noise = 0.5;
    let gp = exact_gp(&kernel, &x, &y, noise);
    let mut cov = gp.post_cov.clone();
    crate::linalg::symmetrize(&mut cov);
    let out = SvgpOutput {
        kernel,
        z: x.clone(),
        q_mu: gp.post_mean.clone(),
        q_sqrt: cholesky(&cov.view()).expect("posterior covariance is PD"),
        noise_variance: noise,
    };
    (out, gp, x, y)
}

fn random_instance(kind: KernelKind, seed: u64, m: usize, n: usize, d: usize) -> (SvgpOutput, Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0));
    let y = Array1::from_shape_simple_fn(n, || rng.random_range(-1.5..1.5));
    let z = Array2::from_shape_simple_fn((m, d), || rng.random_range(-2.0..2.0));
    let ell: Vec<f64> = (0..d).map(|_| rng.random_range(0.6..1.8)).collect();
    let kernel = Kernel::new(kind, rng.random_range(0.5..2.0), ell).unwrap();
    let mut out = SvgpOutput::prior(kernel, z, rng.random_range(0.05..0.5)).unwrap();
    for v in out.q_mu.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for i in 0..m {
        for j in 0..i {
            out.q_sqrt[[i, j]] = rng.random_range(-0.4..0.4);
        }
        out.q_sqrt[[i, i]] = rng.random_range(0.2..1.0);
    }
    (out, x, y)
}

/// Largest component-wise relative error between analytic and central-difference gradients.
fn max_grad_error(out: &SvgpOutput, x: &Array2<f64>, y: &Array1<f64>, n_total: usize) -> f64 {
    let (_, grad) = out.elbo_and_grad(&x.view(), &y.view(), n_total).unwrap();
    let p0 = out.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut probe = out.clone();
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        probe.set_params(&p).unwrap();
        let fp = probe.elbo(&x.view(), &y.view(), n_total).unwrap();
        p[i] = p0[i] - h;
        probe.set_params(&p).unwrap();
        let fm = probe.elbo(&x.view(), &y.view(), n_total).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn params_round_trip() {
    let (out, _, _) = random_instance(KernelKind::Matern32, 1, 4, 6, 2);
    let mut copy = out.clone();
    copy.set_params(&out.params()).unwrap();
    for (a, b) in copy.params().iter().zip(out.params()) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    assert_eq!(out.params().len(), out.n_params());
    assert!(copy.set_params(&[0.0; 3]).is_err());
}

#[test]
fn kl_vanishes_at_prior() {
    let z = array![[0.0, 1.0], [1.0, -0.5], [2.0, 0.3], [-1.0, 0.0]];
    let k = Kernel::new(KernelKind::Matern32, 1.5, vec![0.7, 1.2]).unwrap();
    let out = SvgpOutput::prior(k, z, 0.1).unwrap();
    assert_abs_diff_eq!(out.kl().unwrap(), 0.0, epsilon = 1e-9);
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    for kind in [KernelKind::Matern32, KernelKind::SquaredExponential] {
        for seed in 0..3 {
            let (out, x, y) = random_instance(kind, seed, 5, 8, 2);
            let err = max_grad_error(&out, &x, &y, 8);
            assert!(err <= 1e-4, "{kind:?} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn minibatch_gradient_matches_finite_differences() {
    let (out, x, y) = random_instance(KernelKind::Matern32, 17, 5, 8, 3);
    let err = max_grad_error(&out, &x, &y, 120);
    assert!(err <= 1e-4, "relative error {err:e}");
}

#[test]
fn exact_equivalent_elbo_is_log_marginal_likelihood() {
    for kind in [KernelKind::Matern32, KernelKind::SquaredExponential] {
        let (out, gp, x, y) = exact_equivalent(kind);
        let elbo = out.elbo(&x.view(), &y.view(), 12).unwrap();
        assert_abs_diff_eq!(elbo, gp.lml, epsilon = 1e-6);
    }
}

#[test]
fn exact_equivalent_prediction_matches_dense_gp() {
    let (out, gp, x, y) = exact_equivalent(KernelKind::Matern32);
    let xs = Array2::from_shape_fn((25, 1), |(i, _)| -4.0 + 0.33 * i as f64);
    let (mean, var) = out.predict_latent(&xs.view()).unwrap();
    let k = &out.kernel;
    for (i, row) in xs.outer_iter().enumerate() {
        let ks = Array1::from_iter(x.outer_iter().map(|r| k.eval(&row, &r).unwrap()));
        let m = ks.dot(&gp.c_inv.dot(&y));
        let v = k.variance - ks.dot(&gp.c_inv.dot(&ks));
        assert_abs_diff_eq!(mean[i], m, epsilon = 1e-5);
        assert_abs_diff_eq!(var[i], v, epsilon = 1e-5);
    }
}

#[test]
fn prior_is_reproduced_at_inducing_locations() {
    let z = array![[0.0], [0.8], [2.0]];
    let k = Kernel::new(KernelKind::Matern32, 2.0, vec![1.0]).unwrap();
    let out = SvgpOutput::prior(k, z.clone(), 0.1).unwrap();
    let (mean, var) = out.predict_latent(&z.view()).unwrap();
    for i in 0..3 {
        assert_abs_diff_eq!(mean[i], 0.0);
        assert_abs_diff_eq!(var[i], 2.0, epsilon = 1e-6);
    }
}

#[test]
fn far_from_data_variance_tends_to_prior() {
    let (mut out, _, _, _) = exact_equivalent(KernelKind::Matern32);
    out.q_mu.fill(0.3);
    let far = array![[200.0]];
    let (mean, var) = out.predict_latent(&far.view()).unwrap();
    assert_abs_diff_eq!(var[0], out.kernel.variance, epsilon = 1e-9);
    assert_abs_diff_eq!(mean[0], 0.0, epsilon = 1e-9);
}

#[test]
fn predict_rejects_wrong_dimension() {
    let (out, _, _, _) = exact_equivalent(KernelKind::Matern32);
    assert!(matches!(
        out.predict_latent(&array![[1.0, 2.0]].view()),
        Err(Error::DimensionMismatch { .. })
    ));
}

fn toy_config(steps: usize) -> SvgpConfig {
    SvgpConfig {
        n_inducing: 6,
        steps,
        batch_size: 4,
        seed: 5,
        init_lengthscale: Some(1.0),
        ..SvgpConfig::default()
    }
}

#[test]
fn training_improves_smoothed_elbo() {
    let (x, y) = toy_1d();
    let y2 = y.clone().insert_axis(Axis(1));
    let cfg = toy_config(200);
    let model = SvgpModel::init(&x.view(), &y2.view(), &cfg)
        .unwrap()
        .train_arrays(&x.view(), &y2.view(), &cfg)
        .unwrap();
    let log = &model.training_log[0];
    assert_eq!(log.len(), 200);
    let start = log[..20].iter().sum::<f64>() / 20.0;
    let end = log[180..].iter().sum::<f64>() / 20.0;
    assert!(end >= start, "start {start}, end {end}");
}

#[test]
fn zero_steps_leaves_init_unchanged() {
    let (x, y) = toy_1d();
    let y2 = y.insert_axis(Axis(1));
    let cfg = toy_config(0);
    let init = SvgpModel::init(&x.view(), &y2.view(), &cfg).unwrap();
    let trained = init.clone().train_arrays(&x.view(), &y2.view(), &cfg).unwrap();
    assert_eq!(init.outputs, trained.outputs);
}

#[test]
fn seeded_training_is_deterministic() {
    let (x, y) = toy_1d();
    let y2 = ndarray::stack![Axis(1), y, y.mapv(|v| v * v)];
    let cfg = toy_config(30);
    let run = || {
        SvgpModel::init(&x.view(), &y2.view(), &cfg)
            .unwrap()
            .train_arrays(&x.view(), &y2.view(), &cfg)
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_objective_aborts() {
    let (x, y) = toy_1d();
    let y2 = y.insert_axis(Axis(1));
    let cfg = toy_config(5);
    let mut model = SvgpModel::init(&x.view(), &y2.view(), &cfg).unwrap();
    model.outputs[0].q_mu[0] = f64::NAN;
    assert!(matches!(
        model.train_arrays(&x.view(), &y2.view(), &cfg),
        Err(Error::NonFinite { .. })
    ));
}

#[test]
fn noise_is_fixed_fraction_of_mean_absolute_target() {
    let (x, y) = toy_1d();
    let y2 = y.clone().insert_axis(Axis(1));
    let cfg = toy_config(0);
    let model = SvgpModel::init(&x.view(), &y2.view(), &cfg).unwrap();
    let mean_abs = y.iter().map(|v| v.abs()).sum::<f64>() / 12.0;
    assert_abs_diff_eq!(model.outputs[0].noise_variance, 1e-5 * mean_abs, epsilon = 1e-18);
}

#[test]
fn include_noise_flag_adds_noise_variance() {
    let (x, y) = toy_1d();
    let y2 = y.insert_axis(Axis(1));
    let cfg = toy_config(0);
    let mut model = SvgpModel::init(&x.view(), &y2.view(), &cfg).unwrap();
    let (_, v0) = model.predict_latent(&x.view()).unwrap();
    model.include_noise = true;
    let (_, v1) = model.predict_latent(&x.view()).unwrap();
    let noise = model.outputs[0].noise_variance;
    for (a, b) in v0.iter().zip(v1.iter()) {
        assert_abs_diff_eq!(b - a, noise, epsilon = 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn prop_gradient_correct(seed in 0u64..10_000, se in any::<bool>()) {
        let kind = if se { KernelKind::SquaredExponential } else { KernelKind::Matern32 };
        let (out, x, y) = random_instance(kind, seed, 5, 8, 2);
        let err = max_grad_error(&out, &x, &y, 8);
        prop_assert!(err <= 1e-4, "relative error {:e}", err);
    }

    #[test]
    fn prop_variance_bounded_by_prior(seed in 0u64..10_000, c in 0.0f64..1.0) {
        let (mut out, _, _) = random_instance(KernelKind::Matern32, seed, 6, 4, 2);
        let k = out.kernel.gram(&out.z.view()).unwrap();
        let (l, _) = crate::linalg::jittered_cholesky(&k.view()).unwrap();
        out.q_sqrt = l * c.sqrt().max(1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let xs = Array2::from_shape_simple_fn((40, 2), || rng.random_range(-6.0..6.0));
        let (_, var) = out.predict_latent(&xs.view()).unwrap();
        for v in var.iter() {
            prop_assert!(*v >= 0.0 && *v <= out.kernel.variance + 1e-8);
        }
    }

    #[test]
    fn prop_elbo_below_log_marginal_likelihood(seed in 0u64..10_000) {
        let (x, y) = toy_1d();
        let (mut out, _, _) = random_instance(KernelKind::Matern32, seed, 5, 2, 1);
        out.noise_variance = 0.3;
        let gp = exact_gp(&out.kernel, &x, &y, out.noise_variance);
        let elbo = out.elbo(&x.view(), &y.view(), 12).unwrap();
        prop_assert!(elbo <= gp.lml + 1e-6);
    }
}
