mod common;

use common::*;
use overparam_core::seeding::rng_from_seed;
use overparam_core::spectra::*;
use overparam_core::tensorlin::{khatri_rao_power, min_singular, Matrix};
use overparam_core::Activation;
use std::f64::consts::PI;

const SAMPLES: usize = 20_000;

#[test]
fn relu_scalar_covariance() {
    let x = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
    let est = nn_covariance_mc(&x, Activation::Relu, SAMPLES, 1).unwrap();
    assert!((est.sigma[(0, 0)] - 0.5).abs() <= 3.0 * est.std_err);
}

#[test]
fn relu_orthonormal_rows_give_half_identity() {
    let x = Matrix::identity(4);
    let est = nn_covariance_mc(&x, Activation::Relu, SAMPLES, 2).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert_eq!(est.sigma[(i, j)], 0.0);
            }
        }
    }
    let lam = lambda_estimate(&x, Activation::Relu, SAMPLES, 2).unwrap();
    assert!((lam.value - 0.5).abs() <= 3.0 * lam.std_err);
}

#[test]
fn quadratic_mc_matches_closed_form() {
    let mut rng = rng_from_seed(3);
    let x = sphere(&mut rng, 6, 4);
    let exact = nn_covariance_quadratic(&x).unwrap();
    let kr = khatri_rao_power(&x, 2).unwrap();
    assert!(exact.max_abs_diff(&kr.gram_rows()) <= 1e-12);
    let est = nn_covariance_mc(&x, Activation::Quadratic, 50_000, 3).unwrap();
    assert!(est.sigma.max_abs_diff(&exact) <= 4.0 * est.std_err);
}

#[test]
fn quadratic_lambda_is_exact() {
    let mut rng = rng_from_seed(4);
    let x = sphere(&mut rng, 7, 5);
    let lam = lambda_estimate(&x, Activation::Quadratic, 1000, 0).unwrap();
    let s = min_singular(&khatri_rao_power(&x, 2).unwrap()).unwrap();
    assert!((lam.value - s * s).abs() <= 1e-10);
    assert!((quadratic_lower_bound(&x, Activation::Quadratic).unwrap() - lam.value).abs() <= 1e-10);
}

#[test]
fn orthonormal_relu_quadratic_bound() {
    let b = quadratic_lower_bound(&Matrix::identity(5), Activation::Relu).unwrap();
    assert!((b - 1.0 / (2.0 * PI)).abs() < 1e-12);
}

#[test]
fn hermite_reference_values() {
    assert!((mu(Activation::Relu).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
    assert!((mu(Activation::Softplus).unwrap() - 0.207).abs() < 5e-3);
    assert!((mu_tilde(Activation::Relu).unwrap() - 0.5).abs() < 1e-15);
    assert!((mu_tilde(Activation::Softplus).unwrap() - 0.5).abs() < 1e-10);
    assert!((mu(Activation::Identity).unwrap()).abs() < 1e-12);
}

// Composite Simpson on [0, 14] against the standard normal density.
fn half_line_mean(f: impl Fn(f64) -> f64) -> f64 {
    let steps = 200_000;
    let h = 14.0 / steps as f64;
    let pdf = |g: f64| (-0.5 * g * g).exp() / (2.0 * PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=steps {
        let g = i as f64 * h;
        let wt = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += wt * f(g) * pdf(g);
    }
    acc * h / 3.0
}

#[test]
fn relu_closed_forms_agree_with_half_line_integral() {
    for r in 0..8 {
        let deriv = half_line_mean(|g| normalized_hermite(r, g)[r]);
        let value = half_line_mean(|g| g * normalized_hermite(r, g)[r]);
        let d_closed = hermite_mu(Activation::Relu, Target::Derivative, r, DEFAULT_QUAD_ORDER).unwrap();
        let v_closed = hermite_mu(Activation::Relu, Target::Value, r, DEFAULT_QUAD_ORDER).unwrap();
        assert!((deriv - d_closed).abs() < 1e-10, "r={r}: {deriv} vs {d_closed}");
        assert!((value - v_closed).abs() < 1e-10, "r={r}: {value} vs {v_closed}");
    }
}

#[test]
fn parseval_bound_holds() {
    for act in [Activation::Softplus, Activation::Relu, Activation::Quadratic, Activation::Identity] {
        for target in [Target::Value, Target::Derivative] {
            let total: f64 = (0..=12)
                .map(|r| hermite_mu(act, target, r, DEFAULT_QUAD_ORDER).unwrap().powi(2))
                .sum();
            assert!(total <= gaussian_square_mean(act, target).unwrap() + 1e-6, "{act} {target:?}");
        }
    }
}

#[test]
fn hermite_bound_orders() {
    let mut rng = rng_from_seed(5);
    let x = sphere(&mut rng, 6, 3);
    for act in [Activation::Softplus, Activation::Relu] {
        assert_eq!(
            hermite_lower_bound(&x, act, 1).unwrap(),
            quadratic_lower_bound(&x, act).unwrap()
        );
    }
    let s = min_singular(&x).unwrap();
    assert!((hermite_lower_bound(&x, Activation::Relu, 0).unwrap() - 0.25 * s * s).abs() < 1e-14);
}

#[test]
fn lambda_dominates_its_lower_bounds() {
    for seed in 0..5 {
        let mut rng = rng_from_seed(100 + seed);
        let x = sphere(&mut rng, 8, 5);
        let lam = lambda_estimate(&x, Activation::Softplus, SAMPLES, seed).unwrap();
        let q = quadratic_lower_bound(&x, Activation::Softplus).unwrap();
        assert!(lam.value >= q - 3.0 * lam.std_err);
        assert!(lam.value <= 1.0 + 3.0 * lam.std_err);
        let x3 = sphere(&mut rng, 6, 3);
        let lam3 = lambda_estimate(&x3, Activation::Softplus, SAMPLES, seed).unwrap();
        let h2 = hermite_lower_bound(&x3, Activation::Softplus, 2).unwrap();
        assert!(lam3.value >= h2 - 3.0 * lam3.std_err);
    }
}

#[test]
fn output_covariance_scalars() {
    let x = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
    let q = output_covariance_mc(&x, Activation::Quadratic, 100_000, 6).unwrap();
    assert!((q.sigma[(0, 0)] - 0.75).abs() <= 3.0 * q.std_err);
    let r = output_covariance_mc(&x, Activation::Relu, SAMPLES, 7).unwrap();
    assert!((r.sigma[(0, 0)] - 0.5).abs() <= 3.0 * r.std_err);
}

#[test]
fn lambda_tilde_dominates_gamma_bound() {
    for seed in 0..5 {
        let mut rng = rng_from_seed(200 + seed);
        let x = sphere(&mut rng, 6, 5);
        let lt = lambda_tilde_estimate(&x, Activation::Relu, SAMPLES, seed).unwrap();
        let g = gamma(Activation::Relu).unwrap();
        let s = min_singular(&khatri_rao_power(&x, 2).unwrap()).unwrap();
        assert!((gamma_lower_bound(&x, Activation::Relu).unwrap() - g * g * s * s).abs() < 1e-14);
        assert!(lt.value >= g * g * s * s - 3.0 * lt.std_err);
    }
}

#[test]
fn separation_matches_pair_scan() {
    let mut rng = rng_from_seed(8);
    let x = sphere(&mut rng, 10, 20);
    let mut best = f64::INFINITY;
    for i in 0..10 {
        for j in 0..i {
            let minus: f64 = (0..20).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum::<f64>().sqrt();
            let plus: f64 = (0..20).map(|c| (x[(i, c)] + x[(j, c)]).powi(2)).sum::<f64>().sqrt();
            best = best.min(minus.min(plus));
        }
    }
    assert!((separation(&x).unwrap() - best).abs() < 1e-15);
}

#[test]
fn relu_lambda_above_separation_bound() {
    let mut rng = rng_from_seed(9);
    let x = sphere(&mut rng, 6, 12);
    let lam = lambda_estimate(&x, Activation::Relu, SAMPLES, 9).unwrap();
    let b = separation_lambda_bound(separation(&x).unwrap(), 6).unwrap();
    assert!(lam.value >= b - 3.0 * lam.std_err);
}

#[test]
fn estimates_are_bit_reproducible() {
    let mut rng = rng_from_seed(10);
    let x = sphere(&mut rng, 5, 3);
    let a = nn_covariance_mc(&x, Activation::Softplus, 10_000, 77).unwrap();
    let b = nn_covariance_mc(&x, Activation::Softplus, 10_000, 77).unwrap();
    assert_eq!(a, b);
    let c = nn_covariance_mc(&x, Activation::Softplus, 10_000, 78).unwrap();
    assert_ne!(a.sigma, c.sigma);
}

#[test]
fn mc_estimates_are_psd() {
    let mut rng = rng_from_seed(11);
    let x = sphere(&mut rng, 7, 4);
    for act in [Activation::Softplus, Activation::Relu] {
        let est = nn_covariance_mc(&x, act, SAMPLES, 3).unwrap();
        assert!(overparam_core::tensorlin::min_eig_sym(&est.sigma).unwrap() >= -1e-9);
    }
}

#[test]
fn report_is_complete_and_serializes_flat() {
    let mut rng = rng_from_seed(12);
    let x = sphere(&mut rng, 6, 4);
    let rep = spectral_report(&x, Activation::Softplus, 2_000, 5).unwrap();
    assert_eq!(rep.samples_used, 2_000);
    assert_eq!(rep.lambda_hermite_bounds.len(), REPORT_MAX_HERMITE_ORDER + 1);
    assert!(rep.lambda_mc_std_err >= 0.0 && rep.lambda_quadratic_bound >= 0.0);
    let json = serde_json::to_value(&rep).unwrap();
    for key in ["op_norm_x", "sigma_min_kr2", "lambda_mc", "lambda_tilde_mc", "delta_separation", "separation_bound", "seed"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
