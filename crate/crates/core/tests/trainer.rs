mod common;

use common::*;
use overparam_core::netcore::init_theorem;
use overparam_core::seeding::rng_from_seed;
use overparam_core::tensorlin::{min_singular, op_norm, Matrix};
use overparam_core::trainer::*;
use overparam_core::{spectra, Activation, Dataset, Error, ShallowNet};
use proptest::prelude::*;

fn linear_problem(seed: u64, n: usize, d: usize) -> (Dataset, ShallowNet) {
    let mut rng = rng_from_seed(seed);
    let data = dataset(seed, n, d);
    let w = gaussian(&mut rng, 1, d);
    (data, ShallowNet::new(w, vec![1.0], Activation::Identity).unwrap())
}

#[test]
fn identity_fit_reaches_least_squares() {
    let (data, mut net) = linear_problem(1, 12, 4);
    let x2 = op_norm(data.x()).unwrap().powi(2);
    let cfg = TrainConfig::gd(5000, 0.0, StepRule::Fixed { eta: 1.0 / x2 });
    let trace = gd_train(&mut net, &data, &cfg).unwrap();
    // At the least-squares floor the residual only jitters by rounding.
    assert!(trace.residual_norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
    let x = to_na(data.x());
    let y = nalgebra::DVector::from_column_slice(data.y());
    let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    let ls = (&x * beta - &y).norm();
    assert!((trace.final_residual().unwrap() - ls).abs() < 1e-8 * data.y_norm());
}

#[test]
fn zero_step_is_stationary() {
    let (data, mut net) = theorem_net(2, 6, 4, 20, Activation::Softplus);
    let w0 = net.w().clone();
    let trace = gd_train(&mut net, &data, &TrainConfig::gd(10, 0.0, StepRule::Fixed { eta: 0.0 })).unwrap();
    assert_eq!(net.w(), &w0);
    assert_eq!(trace.len(), 11);
    assert!(trace.residual_norms.iter().all(|&r| r == trace.residual_norms[0]));
    assert!(trace.path_length.iter().all(|&p| p == 0.0));
    assert!(trace.spec_dist_to_init.iter().all(|&p| p == 0.0));
}

#[test]
fn sgd_on_one_sample_matches_gd() {
    let (data, net) = theorem_net(3, 1, 5, 30, Activation::Softplus);
    let rule = StepRule::TheoremSmooth { eta_bar: 1.0 };
    let mut a = net.clone();
    let mut b = net;
    let ga = gd_train(&mut a, &data, &TrainConfig::gd(50, 0.0, rule)).unwrap();
    let gb = sgd_train(&mut b, &data, &TrainConfig::sgd(50, 0.0, rule, 99)).unwrap();
    assert_eq!(ga, gb);
    assert_eq!(a, b);
}

#[test]
fn zero_residual_start_does_not_move() {
    let (data, net) = theorem_net(4, 5, 3, 10, Activation::Softplus);
    let y = net.forward(data.x()).unwrap();
    let exact = Dataset::new(data.x().clone(), y).unwrap();
    for cfg in [
        TrainConfig::gd(20, 0.0, StepRule::Fixed { eta: 0.1 }),
        TrainConfig::sgd(20, 0.0, StepRule::Fixed { eta: 0.1 }, 1),
    ] {
        let mut m = net.clone();
        let trace = train(&mut m, &exact, &cfg).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations_run, 0);
        assert_eq!(m.w(), net.w());
    }
}

#[test]
fn divergence_returns_partial_trace() {
    let (data, mut net) = theorem_net(5, 6, 4, 20, Activation::Quadratic);
    match gd_train(&mut net, &data, &TrainConfig::gd(1000, 0.0, StepRule::Fixed { eta: 1e3 })) {
        Err(Error::Diverged { trace, iteration, .. }) => {
            assert!(!trace.is_empty());
            assert!(trace.len() <= iteration + 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig::gd(0, 0.0, StepRule::Fixed { eta: 0.1 }),
        TrainConfig::gd(5, -1.0, StepRule::Fixed { eta: 0.1 }),
        TrainConfig::gd(5, 0.0, StepRule::TheoremSmooth { eta_bar: 1.5 }),
        TrainConfig::gd(5, 0.0, StepRule::TheoremRelu { eta_bar: 0.0 }),
        TrainConfig::sgd(5, 0.0, StepRule::TheoremSgd { eta_bar: 1.0, nu: 2.0 }, 0),
        TrainConfig::gd(5, 0.0, StepRule::Fixed { eta: f64::NAN }),
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    let mut cfg = TrainConfig::gd(5, 0.0, StepRule::Fixed { eta: 0.1 });
    cfg.record_spectrum_every = Some(0);
    assert!(cfg.validate().is_err());
}

#[test]
fn step_size_values() {
    // ‖X‖ = 1 and σ_min(X*X) = 1 for orthonormal rows.
    let x = Matrix::identity(4);
    let y = vec![2.0, 0.0, 0.0, 0.0];
    let data = Dataset::new(x, y).unwrap();
    let s = theorem_step_size(&data, Activation::Softplus, StepRule::TheoremSmooth { eta_bar: 1.0 }).unwrap();
    assert!((s - 4.0 / (2.0 * 4.0)).abs() < 1e-15);
    let r = theorem_step_size(&data, Activation::Relu, StepRule::TheoremRelu { eta_bar: 0.5 }).unwrap();
    assert!((r - 4.0 * 0.5 / (3.0 * 4.0)).abs() < 1e-15);
    let sgd = theorem_step_size(&data, Activation::Relu, StepRule::TheoremSgd { eta_bar: 1.0, nu: 3.0 }).unwrap();
    let mu2 = 1.0 / (2.0 * std::f64::consts::PI);
    assert!((sgd - mu2 / 27.0 * (4.0 / 4.0)).abs() < 1e-14);
    let zero = Dataset::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
    assert!(theorem_step_size(&zero, Activation::Relu, StepRule::TheoremRelu { eta_bar: 1.0 }).is_err());
    assert!(theorem_step_size(&data, Activation::Quadratic, StepRule::TheoremSmooth { eta_bar: 1.0 }).is_err());
}

#[test]
fn spectrum_and_sign_flip_sampling() {
    let (data, mut net) = theorem_net(6, 6, 4, 40, Activation::Relu);
    let mut cfg = TrainConfig::gd(20, 0.0, StepRule::TheoremRelu { eta_bar: 1.0 });
    cfg.record_spectrum_every = Some(5);
    let trace = gd_train(&mut net, &data, &cfg).unwrap();
    let iters: Vec<usize> = trace.jacobian_min_sing_samples.iter().map(|p| p.0).collect();
    assert_eq!(iters, vec![0, 5, 10, 15, 20]);
    assert_eq!(trace.sign_flip_samples.len(), 5);
    assert_eq!(trace.sign_flip_samples[0].1, 0.0);
}

#[test]
fn untracked_spectral_distance_is_empty() {
    let (data, mut net) = theorem_net(7, 5, 3, 10, Activation::Softplus);
    let mut cfg = TrainConfig::gd(5, 0.0, StepRule::TheoremSmooth { eta_bar: 1.0 });
    cfg.track_spectral_distance = false;
    let trace = gd_train(&mut net, &data, &cfg).unwrap();
    assert!(trace.spec_dist_to_init.is_empty());
    assert_eq!(trace.frob_dist_to_init.len(), 6);
}

#[test]
fn trace_serializations() {
    let (data, mut net) = theorem_net(8, 5, 3, 10, Activation::Softplus);
    let trace = gd_train(&mut net, &data, &TrainConfig::gd(4, 0.0, StepRule::TheoremSmooth { eta_bar: 1.0 })).unwrap();
    let csv = trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iter,residual,frob_dist,spec_dist,path_length"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), trace.len());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[1], trace.residual_norms[i]);
        assert_eq!(row[2], trace.frob_dist_to_init[i]);
        assert_eq!(row[4], trace.path_length[i]);
    }
    let json = serde_json::to_string(&trace).unwrap();
    let back: TrainTrace = serde_json::from_str(&json).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn output_fit_identity_features() {
    let y = vec![0.5, -1.0, 2.0];
    let fit = fit_output_from_features(&Matrix::identity(3), &y).unwrap();
    assert_eq!(fit.v, y);
    assert_eq!(fit.residual_norm, 0.0);
    assert_eq!(fit.min_eig_gram, 1.0);
}

#[test]
fn output_fit_relu_interpolates() {
    let mut rng = rng_from_seed(9);
    let x = sphere(&mut rng, 15, 8);
    let y: Vec<f64> = gaussian(&mut rng, 1, 15).into_vec();
    let w0 = gaussian(&mut rng, 600, 8);
    let fit = fit_output_layer(&x, &w0, Activation::Relu, &y).unwrap();
    assert!(fit.min_eig_gram > 0.0);
    assert!(fit.residual_norm < 1e-8);
    assert_eq!(fit.v.len(), 600);
}

#[test]
fn output_fit_duplicate_rows_is_singular() {
    let mut rng = rng_from_seed(10);
    let mut rows: Vec<Vec<f64>> = sphere(&mut rng, 5, 4).row_iter().map(<[f64]>::to_vec).collect();
    rows[4] = rows[1].clone();
    let x = Matrix::from_rows(&rows).unwrap();
    let w0 = gaussian(&mut rng, 100, 4);
    let y = vec![1.0, 2.0, 3.0, 4.0, 5.0];
    assert!(matches!(
        fit_output_layer(&x, &w0, Activation::Relu, &y),
        Err(Error::SingularGram { .. })
    ));
}

#[test]
fn average_jacobian_cases() {
    let mut rng = rng_from_seed(11);
    let x = sphere(&mut rng, 5, 3);
    let a = random_net(&mut rng, 4, 3, Activation::Softplus);
    let j = a.jacobian(&x).unwrap();
    assert!(avg_jacobian(&a, &a, &x, 5).unwrap().max_abs_diff(&j) < 1e-14);
    assert!(avg_jacobian(&a, &a, &x, 1).is_err());

    let lin = random_net(&mut rng, 4, 3, Activation::Identity);
    let mut lin_b = lin.clone();
    lin_b.set_w(gaussian(&mut rng, 4, 3)).unwrap();
    assert!(avg_jacobian(&lin, &lin_b, &x, 3).unwrap().max_abs_diff(&lin.jacobian(&x).unwrap()) < 1e-14);

    let q = random_net(&mut rng, 4, 3, Activation::Quadratic);
    let mut q_b = q.clone();
    q_b.set_w(gaussian(&mut rng, 4, 3)).unwrap();
    let two = avg_jacobian(&q, &q_b, &x, 2).unwrap();
    let many = avg_jacobian(&q, &q_b, &x, 64).unwrap();
    assert!(two.max_abs_diff(&many) < 1e-12);
    let mut mid = q.clone();
    mid.set_w(q.w().add(q_b.w()).unwrap().scale(0.5)).unwrap();
    assert!(two.max_abs_diff(&mid.jacobian(&x).unwrap()) < 1e-12);

    let other = random_net(&mut rng, 5, 3, Activation::Quadratic);
    assert!(avg_jacobian(&q, &other, &x, 2).is_err());
}

#[test]
fn min_singular_identity_activation() {
    let mut rng = rng_from_seed(12);
    let x = sphere(&mut rng, 4, 6);
    let net = ShallowNet::new(gaussian(&mut rng, 1, 6), vec![1.0], Activation::Identity).unwrap();
    assert!((jacobian_min_sing_at(&net, &x).unwrap() - min_singular(&x).unwrap()).abs() < 1e-13);
}

#[test]
fn min_singular_duplicate_rows_is_zero() {
    let mut rng = rng_from_seed(13);
    let mut rows: Vec<Vec<f64>> = sphere(&mut rng, 4, 3).row_iter().map(<[f64]>::to_vec).collect();
    rows[3] = rows[0].clone();
    let x = Matrix::from_rows(&rows).unwrap();
    let net = random_net(&mut rng, 20, 3, Activation::Softplus);
    assert!(jacobian_min_sing_at(&net, &x).unwrap() < 1e-12);
}

#[test]
fn jacobian_at_init_dominates_lower_bound() {
    let trials = 40;
    let mut hits = 0;
    for t in 0..trials {
        let (data, net) = theorem_net(1000 + t, 8, 6, 400, Activation::Softplus);
        let lb = spectra::quadratic_lower_bound(data.x(), Activation::Softplus).unwrap();
        let target = (data.y_norm() / 8f64.sqrt()) * lb.sqrt() / 2f64.sqrt() - 1e-6;
        if jacobian_min_sing_at(&net, data.x()).unwrap() >= target {
            hits += 1;
        }
    }
    assert!(hits * 100 >= 95 * trials, "{hits}/{trials}");
}

#[test]
fn sign_flip_budget_reports() {
    let (data, net) = theorem_net(14, 6, 4, 200, Activation::Relu);
    let b = sign_flip_budget(&net, data.x(), 0.1).unwrap();
    assert!((b.budget - 2.0 * b.m0 * b.m0).abs() < 1e-15);
    let xn = op_norm(data.x()).unwrap();
    // Balanced ±c weights: ‖v‖/‖v‖∞ = √k.
    let expect = 200f64.sqrt() / 200f64.sqrt() * 0.1f64.sqrt() / xn;
    assert!((b.m0 - expect).abs() < 1e-12);
    assert!(b.min_mth_smallest_preactivation >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn path_dominates_distance(seed in 0u64..10_000, eta in 0.0f64..0.5) {
        let (data, mut net) = theorem_net(seed, 5, 3, 8, Activation::Softplus);
        let trace = gd_train(&mut net, &data, &TrainConfig::gd(15, 0.0, StepRule::Fixed { eta })).unwrap();
        for (p, f) in trace.path_length.iter().zip(&trace.frob_dist_to_init) {
            prop_assert!(*p >= *f * (1.0 - 1e-12));
        }
        for (s, f) in trace.spec_dist_to_init.iter().zip(&trace.frob_dist_to_init) {
            prop_assert!(*s <= *f * (1.0 + 1e-9));
        }
        prop_assert!(trace.residual_norms.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn theorem_init_is_deterministic(seed in 0u64..10_000) {
        let data = dataset(seed, 4, 3);
        let a = init_theorem(10, 3, Activation::Relu, &data, seed).unwrap();
        let b = init_theorem(10, 3, Activation::Relu, &data, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
