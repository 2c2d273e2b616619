//! Neural-net covariance `Σ(X) = E[(φ′(Xw)φ′(Xw)ᵀ) ⊙ XXᵀ]`, the output
//! feature covariance `Σ̃(X) = E[φ(Xw)φ(Xw)ᵀ]`, their minimum eigenvalues and
//! the computable lower bounds on them.

mod hermite;
mod montecarlo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{check_unit_rows, Activation};
use crate::seeding::mix;
use crate::tensorlin::{
    hadamard, khatri_rao_power, min_eig_sym, min_singular, norm2, op_norm, Matrix,
};

pub use hermite::{
    gamma, gauss_hermite_rule, gaussian_square_mean, hermite_mu, mu, mu_tilde,
    normalized_hermite, Target, DEFAULT_QUAD_ORDER, MIN_QUAD_ORDER, QUAD_AGREEMENT_TOL,
};

pub const MIN_SAMPLES: usize = 100;
pub const DEFAULT_REPORT_SAMPLES: usize = 20_000;
pub const DEFAULT_ACCEPTANCE_SAMPLES: usize = 200_000;

/// Highest Hermite order attempted by [`spectral_report`].
pub const REPORT_MAX_HERMITE_ORDER: usize = 3;

/// A Monte-Carlo matrix estimate with its largest entrywise standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma: Matrix,
    pub std_err: f64,
    pub samples: usize,
}

/// A scalar estimate `value ± std_err`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

fn check_mc_inputs(x: &Matrix, samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "at least {MIN_SAMPLES} Monte-Carlo samples are required, got {samples}"
        )));
    }
    check_unit_rows(x)
}

pub fn nn_covariance_mc(
    x: &Matrix,
    act: Activation,
    samples: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    check_mc_inputs(x, samples)?;
    let m = montecarlo::outer_moments(x, samples, seed, |z| act.derivative(z));
    let g = x.gram_rows();
    let sigma = hadamard(&m.mean, &g)?;
    let sem = hadamard(&m.sem, &g)?;
    Ok(CovarianceEstimate {
        sigma,
        std_err: sem.max_abs(),
        samples,
    })
}

/// `(XXᵀ) ⊙ (XXᵀ)`, the exact covariance for `φ(z) = z²/2`.
pub fn nn_covariance_quadratic(x: &Matrix) -> Result<Matrix> {
    check_unit_rows(x)?;
    let g = x.gram_rows();
    hadamard(&g, &g)
}

fn min_eig_with_error(est: &CovarianceEstimate) -> Result<Estimate> {
    Ok(Estimate {
        value: min_eig_sym(&est.sigma)?,
        std_err: est.sigma.rows() as f64 * est.std_err,
    })
}

/// `λ(X) = λ_min(Σ(X))`; the error is `n · max SEM`, a Weyl-type bound.
pub fn lambda_estimate(x: &Matrix, act: Activation, samples: usize, seed: u64) -> Result<Estimate> {
    if act == Activation::Quadratic {
        check_mc_inputs(x, samples)?;
        return Ok(Estimate {
            value: min_singular(&khatri_rao_power(x, 2)?)?.powi(2),
            std_err: 0.0,
        });
    }
    min_eig_with_error(&nn_covariance_mc(x, act, samples, seed)?)
}

/// `μ_φ² σ_min²(X * X)`.
pub fn quadratic_lower_bound(x: &Matrix, act: Activation) -> Result<f64> {
    hermite_lower_bound(x, act, 1)
}

/// `μ_r(φ′)² σ_min²(X^{*(r+1)})`.
pub fn hermite_lower_bound(x: &Matrix, act: Activation, r: usize) -> Result<f64> {
    check_unit_rows(x)?;
    let kr = khatri_rao_power(x, r + 1)?;
    let m = hermite_mu(act, Target::Derivative, r, DEFAULT_QUAD_ORDER)?;
    Ok(m * m * min_singular(&kr)?.powi(2))
}

pub fn output_covariance_mc(
    x: &Matrix,
    act: Activation,
    samples: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    check_mc_inputs(x, samples)?;
    let m = montecarlo::outer_moments(x, samples, seed, |z| act.value(z));
    Ok(CovarianceEstimate {
        std_err: m.sem.max_abs(),
        sigma: m.mean,
        samples,
    })
}

/// `λ̃(X) = λ_min(Σ̃(X))` with the same error propagation as [`lambda_estimate`].
pub fn lambda_tilde_estimate(
    x: &Matrix,
    act: Activation,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    min_eig_with_error(&output_covariance_mc(x, act, samples, seed)?)
}

/// `μ_r(φ)² σ_min²(X^{*r})` for `r ≥ 1`, a lower bound on `λ̃(X)`.
pub fn output_hermite_bound(x: &Matrix, act: Activation, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::invalid("output covariance bound needs r >= 1"));
    }
    check_unit_rows(x)?;
    let kr = khatri_rao_power(x, r)?;
    let m = hermite_mu(act, Target::Value, r, DEFAULT_QUAD_ORDER)?;
    Ok(m * m * min_singular(&kr)?.powi(2))
}

/// `γ_φ² σ_min²(X * X)`.
pub fn gamma_lower_bound(x: &Matrix, act: Activation) -> Result<f64> {
    output_hermite_bound(x, act, 2)
}

/// `δ = min_{i<j} min(‖x_i − x_j‖, ‖x_i + x_j‖)`.
pub fn separation(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid("separation needs at least two samples"));
    }
    check_unit_rows(x)?;
    let mut best = f64::INFINITY;
    let mut buf_minus = vec![0.0; x.cols()];
    let mut buf_plus = vec![0.0; x.cols()];
    for i in 0..n {
        for j in i + 1..n {
            for ((m, p), (a, b)) in buf_minus
                .iter_mut()
                .zip(buf_plus.iter_mut())
                .zip(x.row(i).iter().zip(x.row(j)))
            {
                *m = a - b;
                *p = a + b;
            }
            best = best.min(norm2(&buf_minus)).min(norm2(&buf_plus));
        }
    }
    Ok(best)
}

/// `δ / (100 n²)`, a lower bound on `λ(X)` for ReLU.
pub fn separation_lambda_bound(delta: f64, n: usize) -> Result<f64> {
    if !(delta >= 0.0) || n == 0 {
        return Err(Error::invalid(format!(
            "separation bound needs delta >= 0 and n >= 1, got delta={delta}, n={n}"
        )));
    }
    Ok(delta / (100.0 * (n as f64).powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteBound {
    pub r: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub activation: Activation,
    pub op_norm_x: f64,
    pub sigma_min_kr2: f64,
    pub lambda_mc: f64,
    pub lambda_mc_std_err: f64,
    pub lambda_quadratic_bound: f64,
    pub lambda_hermite_bounds: Vec<HermiteBound>,
    pub lambda_tilde_mc: f64,
    pub lambda_tilde_std_err: f64,
    pub lambda_tilde_gamma_bound: f64,
    pub delta_separation: f64,
    pub separation_bound: f64,
    pub samples_used: usize,
    pub seed: u64,
}

/// Every spectral quantity for one dataset. Hermite orders whose Khatri-Rao
/// power would exceed the memory cap are left out of `lambda_hermite_bounds`.
pub fn spectral_report(
    x: &Matrix,
    act: Activation,
    samples: usize,
    seed: u64,
) -> Result<SpectralReport> {
    check_mc_inputs(x, samples)?;
    let lam = lambda_estimate(x, act, samples, seed)?;
    let lam_tilde = lambda_tilde_estimate(x, act, samples, mix(&[seed, 1]))?;
    let mut hermite = Vec::new();
    for r in 0..=REPORT_MAX_HERMITE_ORDER {
        match hermite_lower_bound(x, act, r) {
            Ok(value) => hermite.push(HermiteBound { r, value }),
            Err(Error::MemoryCap { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    let delta = separation(x)?;
    Ok(SpectralReport {
        activation: act,
        op_norm_x: op_norm(x)?,
        sigma_min_kr2: min_singular(&khatri_rao_power(x, 2)?)?,
        lambda_mc: lam.value,
        lambda_mc_std_err: lam.std_err,
        lambda_quadratic_bound: quadratic_lower_bound(x, act)?,
        lambda_hermite_bounds: hermite,
        lambda_tilde_mc: lam_tilde.value,
        lambda_tilde_std_err: lam_tilde.std_err,
        lambda_tilde_gamma_bound: gamma_lower_bound(x, act)?,
        delta_separation: delta,
        separation_bound: separation_lambda_bound(delta, x.rows())?,
        samples_used: samples,
        seed,
    })
}
