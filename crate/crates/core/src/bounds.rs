//! Computable theorem-side quantities: condition numbers, overparameterization
//! margins, contraction rates, misfit, radius and path-length bounds.
//!
//! Unknown absolute constants are never guessed. Margins are returned as the
//! ratio that has to exceed that constant, so a margin above 1 means the
//! requirement holds with constant 1 ("nominal regime").

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Activation, Dataset, ShallowNet};
use crate::spectra;
use crate::tensorlin::{khatri_rao_power, min_singular, op_norm, Matrix};
use crate::trainer::TrainTrace;

/// Absolute slack allowed (relative to `‖r₀‖`) in the per-iterate inequality checks.
pub const TRAJECTORY_TOL: f64 = 1e-12;

/// Slack factor on the geometric envelope `rate^τ ‖r₀‖`.
pub const ENVELOPE_SLACK: f64 = 1e-9;

/// The data-dependent ingredients shared by most bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataGeometry {
    pub n: usize,
    pub d: usize,
    /// `‖X‖`.
    pub op_norm: f64,
    /// `σ_min(X * X)`.
    pub sigma_min_kr2: f64,
}

impl DataGeometry {
    pub fn of(x: &Matrix) -> Result<Self> {
        Ok(Self {
            n: x.rows(),
            d: x.cols(),
            op_norm: op_norm(x)?,
            sigma_min_kr2: min_singular(&khatri_rao_power(x, 2)?)?,
        })
    }

    fn sigma2(&self) -> Result<f64> {
        let s = self.sigma_min_kr2;
        if s > 0.0 {
            Ok(s * s)
        } else {
            Err(Error::Degenerate {
                what: "sigma_min(X*X)",
                value: s,
            })
        }
    }

    fn op2(&self) -> Result<f64> {
        if self.op_norm > 0.0 {
            Ok(self.op_norm * self.op_norm)
        } else {
            Err(Error::Degenerate {
                what: "spectral norm of X",
                value: self.op_norm,
            })
        }
    }

    fn sqrt_d_over_n(&self) -> f64 {
        (self.d as f64 / self.n as f64).sqrt()
    }

    /// `√(d/n) ‖X‖ / σ_min²(X * X)`.
    pub fn kappa(&self) -> Result<f64> {
        Ok(self.sqrt_d_over_n() * self.op_norm / self.sigma2()?)
    }

    /// `√(d/n) ‖X‖ / λ`.
    pub fn kappa_tilde(&self, lam: f64) -> Result<f64> {
        Ok(self.sqrt_d_over_n() * self.op_norm / positive_lam(lam)?)
    }
}

fn positive_lam(lam: f64) -> Result<f64> {
    if lam > 0.0 && lam.is_finite() {
        Ok(lam)
    } else {
        Err(Error::Degenerate {
            what: "lambda",
            value: lam,
        })
    }
}

pub fn kappa(x: &Matrix) -> Result<f64> {
    DataGeometry::of(x)?.kappa()
}

pub fn kappa_tilde(x: &Matrix, lam: f64) -> Result<f64> {
    DataGeometry::of(x)?.kappa_tilde(lam)
}

/// `√(kd) / ((B²/μ²)(1+δ) κ(X) n)`.
pub fn overparam_margin_smooth(
    k: usize,
    d: usize,
    n: usize,
    b: f64,
    mu: f64,
    delta_conf: f64,
    x: &Matrix,
) -> Result<f64> {
    check_margin_inputs(k, n, delta_conf)?;
    if !(b > 0.0 && mu != 0.0) {
        return Err(Error::invalid(format!(
            "margin needs B > 0 and mu != 0, got B={b}, mu={mu}"
        )));
    }
    let kappa = kappa(x)?;
    Ok(((k * d) as f64).sqrt() / ((b * b / (mu * mu)) * (1.0 + delta_conf) * kappa * n as f64))
}

/// `k / ((1+δ)² n ‖X‖⁶ / λ⁴)`.
pub fn overparam_margin_relu(
    k: usize,
    n: usize,
    x: &Matrix,
    lam: f64,
    delta_conf: f64,
) -> Result<f64> {
    check_margin_inputs(k, n, delta_conf)?;
    let lam = positive_lam(lam)?;
    let xn = op_norm(x)?;
    Ok(k as f64 / ((1.0 + delta_conf).powi(2) * n as f64 * xn.powi(6) / lam.powi(4)))
}

/// `√(kd) / ((1+δ)(n²/d) κ³(X) σ_min²(X * X))`, the ReLU requirement stated
/// through `κ(X)` instead of `λ(X)`.
pub fn overparam_margin_relu_kappa(
    k: usize,
    d: usize,
    n: usize,
    x: &Matrix,
    delta_conf: f64,
) -> Result<f64> {
    check_margin_inputs(k, n, delta_conf)?;
    let g = DataGeometry::of(x)?;
    let nf = n as f64;
    Ok(((k * d) as f64).sqrt()
        / ((1.0 + delta_conf) * (nf * nf / d as f64) * g.kappa()?.powi(3) * g.sigma2()?))
}

fn check_margin_inputs(k: usize, n: usize, delta_conf: f64) -> Result<()> {
    if k == 0 || n == 0 || !(delta_conf >= 0.0) {
        return Err(Error::invalid(format!(
            "margins need k, n >= 1 and delta_confidence >= 0, got k={k}, n={n}, delta={delta_conf}"
        )));
    }
    Ok(())
}

/// Which contraction factor to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regime {
    /// `1 − (η̄/32)(μ²/B²) σ_min²(X*X)/‖X‖²`.
    Smooth { mu: f64 },
    /// `1 − (η̄/(48π)) σ_min²(X*X)/‖X‖²`.
    Relu,
    /// `1 − (η̄/32)(1/B²) λ/‖X‖²`.
    MetaSmooth { lam: f64 },
    /// `1 − (η̄/24) λ/‖X‖²`.
    MetaRelu { lam: f64 },
}

/// The contraction factor without the `(0, 1)` regime check.
pub fn predicted_rate_unchecked(regime: Regime, eta_bar: f64, b: f64, geo: &DataGeometry) -> Result<f64> {
    let x2 = geo.op2()?;
    Ok(match regime {
        Regime::Smooth { mu } => 1.0 - eta_bar / 32.0 * (mu * mu / (b * b)) * geo.sigma2()? / x2,
        Regime::Relu => 1.0 - eta_bar / (48.0 * PI) * geo.sigma2()? / x2,
        Regime::MetaSmooth { lam } => 1.0 - eta_bar / 32.0 / (b * b) * lam / x2,
        Regime::MetaRelu { lam } => 1.0 - eta_bar / 24.0 * lam / x2,
    })
}

/// Per-iteration residual contraction factor; [`Error::OutsideRegime`] if it
/// is not in `(0, 1)`.
pub fn predicted_rate(regime: Regime, eta_bar: f64, b: f64, x: &Matrix) -> Result<f64> {
    let rate = predicted_rate_unchecked(regime, eta_bar, b, &DataGeometry::of(x)?)?;
    if rate > 0.0 && rate < 1.0 {
        Ok(rate)
    } else {
        Err(Error::OutsideRegime { rate })
    }
}

/// `‖y‖ (1 + (1+δ) B)`.
pub fn initial_misfit_bound(y_norm: f64, b: f64, delta_conf: f64) -> f64 {
    y_norm * (1.0 + (1.0 + delta_conf) * b)
}

/// `α = (1/(2√2)) (‖y‖/√n) √λ`.
pub fn alpha(y_norm: f64, n: usize, lam: f64) -> f64 {
    y_norm / (n as f64).sqrt() * lam.max(0.0).sqrt() / (2.0 * std::f64::consts::SQRT_2)
}

/// `√32 (√n/‖y‖) ‖r₀‖ / √λ`.
pub fn path_length_bound(y_norm: f64, n: usize, r0: f64, lam: f64) -> f64 {
    if r0 == 0.0 {
        return 0.0;
    }
    32f64.sqrt() * (n as f64).sqrt() / y_norm * r0 / lam.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusCheck {
    /// `R = 4 ‖r₀‖ / α`.
    pub radius: f64,
    pub path_bound: f64,
    /// Total path within `path_bound` and every iterate within `R` of `W₀`.
    pub satisfied: bool,
}

pub fn radius_and_path(trace: &TrainTrace, data: &Dataset, lam_lower: f64) -> Result<RadiusCheck> {
    let r0 = trace
        .initial_residual()
        .ok_or_else(|| Error::invalid("trace is empty"))?;
    let lam = positive_lam(lam_lower)?;
    let (y, n) = (data.y_norm(), data.n());
    let radius = if r0 == 0.0 { 0.0 } else { 4.0 * r0 / alpha(y, n, lam) };
    let path_bound = path_length_bound(y, n, r0, lam);
    let max_dist = trace.frob_dist_to_init.iter().fold(0.0f64, |m, &v| m.max(v));
    let satisfied = trace.total_path_length() <= path_bound && max_dist <= radius;
    Ok(RadiusCheck {
        radius,
        path_bound,
        satisfied,
    })
}

/// Per-iterate verdicts on a trace against the convergence theorem's conclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheck {
    pub monotone: bool,
    /// `(√λ/√32)(‖y‖/√n)‖W_τ − W₀‖_F + ‖r_τ‖ ≤ ‖r₀‖` at every recorded point.
    pub distance_ok: bool,
    pub path_ok: bool,
    /// `‖r_τ‖ ≤ rate^τ ‖r₀‖ (1 + 1e-9)` at every recorded point, when a rate was given.
    pub envelope_ok: Option<bool>,
    /// Largest value of the distance inequality's left side minus `‖r₀‖`.
    pub worst_distance_excess: f64,
    /// Largest `‖r_τ‖ / (rate^τ ‖r₀‖)`.
    pub worst_envelope_ratio: Option<f64>,
}

impl TrajectoryCheck {
    pub fn all_ok(&self) -> bool {
        self.monotone && self.distance_ok && self.path_ok && self.envelope_ok.unwrap_or(true)
    }
}

pub fn check_trajectory(
    trace: &TrainTrace,
    data: &Dataset,
    lam_lower: f64,
    rate: Option<f64>,
) -> Result<TrajectoryCheck> {
    let r0 = trace
        .initial_residual()
        .ok_or_else(|| Error::invalid("trace is empty"))?;
    let lam = positive_lam(lam_lower)?;
    let (y, n) = (data.y_norm(), data.n());
    let res = &trace.residual_norms;
    let monotone = res.windows(2).all(|w| w[1] <= w[0]);
    let coef = lam.sqrt() / 32f64.sqrt() * y / (n as f64).sqrt();
    let worst_distance_excess = res
        .iter()
        .zip(&trace.frob_dist_to_init)
        .map(|(&r, &f)| coef * f + r - r0)
        .fold(f64::NEG_INFINITY, f64::max);
    let distance_ok = worst_distance_excess <= TRAJECTORY_TOL * r0;
    let path_ok = trace.total_path_length() <= path_length_bound(y, n, r0, lam);
    let (envelope_ok, worst_envelope_ratio) = match rate {
        None => (None, None),
        Some(rate) => {
            let worst = trace
                .recorded_iters
                .iter()
                .zip(res)
                .map(|(&t, &r)| {
                    let env = rate.powf(t as f64) * r0;
                    if env > 0.0 {
                        r / env
                    } else if r == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0f64, f64::max);
            (Some(worst <= 1.0 + ENVELOPE_SLACK), Some(worst))
        }
    };
    Ok(TrajectoryCheck {
        monotone,
        distance_ok,
        path_ok,
        envelope_ok,
        worst_distance_excess,
        worst_envelope_ratio,
    })
}

/// `6B / n¹⁰⁰` evaluated in log space; underflows to 0 once `n` is large.
pub fn phi_gram_correction(b: f64, n: usize) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    ((6.0 * b).ln() - 100.0 * (n as f64).ln()).exp()
}

/// `(k/2)(λ̃ − 6B/n¹⁰⁰)`, clamped at 0 since a negative eigenvalue floor is vacuous.
pub fn phi_gram_eig_bound(k: usize, lambda_tilde: f64, b: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("feature Gram bound needs n >= 2"));
    }
    Ok((k as f64 / 2.0 * (lambda_tilde - phi_gram_correction(b, n))).max(0.0))
}

/// Success probabilities printed for context; none of them is ever asserted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityContext {
    /// `1 − 1/n − exp(−δ² n / (2‖X‖²))`.
    pub smooth: f64,
    /// `1 − 2/n − exp(−δ² n / ‖X‖²)`.
    pub relu_meta: f64,
    /// `1 − 1/n − exp(−δ² n / ‖X‖²) − n e^{−n}`; its last term does not
    /// follow from the ReLU meta-statement, whose expression is `relu_meta`.
    pub relu_sigma: f64,
}

impl ProbabilityContext {
    pub fn new(n: usize, op_norm: f64, delta_conf: f64) -> Self {
        let nf = n as f64;
        let e = delta_conf * delta_conf * nf / (op_norm * op_norm);
        Self {
            smooth: 1.0 - 1.0 / nf - (-0.5 * e).exp(),
            relu_meta: 1.0 - 2.0 / nf - (-e).exp(),
            relu_sigma: 1.0 - 1.0 / nf - (-e).exp() - nf * (-nf).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub overparam_ratio_smooth: f64,
    pub overparam_ratio_relu: f64,
    pub overparam_ratio_relu_kappa: f64,
    pub predicted_rate_smooth: f64,
    pub predicted_rate_relu: f64,
    /// Both predicted rates lie in `(0, 1)`.
    pub rates_in_regime: bool,
    pub initial_misfit_bound: f64,
    pub initial_misfit_empirical: f64,
    pub radius_r: f64,
    pub path_length_bound: f64,
    pub delta_confidence: f64,
    pub eta_bar: f64,
    /// The `λ(X)` value (or lower bound) used for `κ̃`, the ReLU margin, `R` and the path bound.
    pub lambda_used: f64,
    pub mu_phi: f64,
    pub derivative_bound_b: f64,
    pub sigma_min_kr2: f64,
    pub op_norm_x: f64,
    pub probabilities: ProbabilityContext,
}

/// Evaluates every bound for `net0` (the initialization) on `data`.
///
/// `lam` is whatever stands in for `λ(X)`: a Monte-Carlo estimate or the
/// lower bound `μ_φ² σ_min²(X*X)`.
pub fn bound_report(
    data: &Dataset,
    net0: &ShallowNet,
    lam: f64,
    eta_bar: f64,
    delta_conf: f64,
) -> Result<BoundReport> {
    let act = net0.activation();
    let b = act.derivative_bound().ok_or_else(|| {
        Error::invalid(format!("{act} has no finite derivative bound B"))
    })?;
    let x = data.x();
    let geo = DataGeometry::of(x)?;
    let (n, d, k) = (data.n(), data.d(), net0.k());
    let mu = spectra::mu(act)?;
    let rate_smooth = predicted_rate_unchecked(Regime::Smooth { mu }, eta_bar, b, &geo)?;
    let rate_relu = predicted_rate_unchecked(Regime::Relu, eta_bar, b, &geo)?;
    let in_regime = |r: f64| r > 0.0 && r < 1.0;
    let r0 = crate::tensorlin::norm2(&net0.residual(data)?);
    let y = data.y_norm();
    let lam = positive_lam(lam)?;
    Ok(BoundReport {
        kappa: geo.kappa()?,
        kappa_tilde: geo.kappa_tilde(lam)?,
        overparam_ratio_smooth: overparam_margin_smooth(k, d, n, b, mu, delta_conf, x)?,
        overparam_ratio_relu: overparam_margin_relu(k, n, x, lam, delta_conf)?,
        overparam_ratio_relu_kappa: overparam_margin_relu_kappa(k, d, n, x, delta_conf)?,
        predicted_rate_smooth: rate_smooth,
        predicted_rate_relu: rate_relu,
        rates_in_regime: in_regime(rate_smooth) && in_regime(rate_relu),
        initial_misfit_bound: initial_misfit_bound(y, b, delta_conf),
        initial_misfit_empirical: r0,
        radius_r: if r0 == 0.0 { 0.0 } else { 4.0 * r0 / alpha(y, n, lam) },
        path_length_bound: path_length_bound(y, n, r0, lam),
        delta_confidence: delta_conf,
        eta_bar,
        lambda_used: lam,
        mu_phi: mu,
        derivative_bound_b: b,
        sigma_min_kr2: geo.sigma_min_kr2,
        op_norm_x: geo.op_norm,
        probabilities: ProbabilityContext::new(n, geo.op_norm, delta_conf),
    })
}

/// `λ` stand-in used when no Monte-Carlo estimate is supplied: `μ_φ² σ_min²(X*X)`.
pub fn lambda_lower(x: &Matrix, act: Activation) -> Result<f64> {
    spectra::quadratic_lower_bound(x, act)
}
