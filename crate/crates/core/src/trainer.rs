//! Gradient descent and SGD over the hidden weights `W`, with full traces.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{mth_smallest_abs, sign_flip_count, Activation, Dataset, ShallowNet};
use crate::seeding::rng_from_seed;
use crate::spectra;
use crate::tensorlin::{
    cholesky, cholesky_solve, khatri_rao_power, min_eig_sym, min_singular, norm2, op_norm,
    spectral_norm, Matrix,
};

/// Loss growth factor over the initial loss that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Relative eigenvalue floor `1e-10 · tr(ΦΦᵀ)/n` below which the feature Gram is singular.
pub const GRAM_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StepRule {
    /// `η = n η̄ / (2 B² ‖y‖² ‖X‖²)`.
    TheoremSmooth { eta_bar: f64 },
    /// `η = n η̄ / (3 ‖y‖² ‖X‖²)`.
    TheoremRelu { eta_bar: f64 },
    /// `η = μ_φ²/(9 ν B⁴) · n/‖y‖² · σ_min²(X*X)/‖X‖² · η̄`.
    TheoremSgd { eta_bar: f64, nu: f64 },
    Fixed { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gd,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Parameter updates for GD; individual sample updates for SGD.
    pub max_iters: usize,
    pub target_rel_residual: f64,
    pub step_rule: StepRule,
    /// Seeds the SGD sample sequence; unused by GD.
    pub seed: u64,
    /// Record `σ_min(J(W_τ))` (and ReLU sign flips) every this many recorded points.
    pub record_spectrum_every: Option<usize>,
    pub algorithm: Algorithm,
    /// Record `‖W_τ − W₀‖` at every point; costs one power iteration each.
    pub track_spectral_distance: bool,
}

impl TrainConfig {
    pub fn gd(max_iters: usize, target_rel_residual: f64, step_rule: StepRule) -> Self {
        Self {
            max_iters,
            target_rel_residual,
            step_rule,
            seed: 0,
            record_spectrum_every: None,
            algorithm: Algorithm::Gd,
            track_spectral_distance: true,
        }
    }

    pub fn sgd(max_iters: usize, target_rel_residual: f64, step_rule: StepRule, seed: u64) -> Self {
        Self {
            seed,
            algorithm: Algorithm::Sgd,
            ..Self::gd(max_iters, target_rel_residual, step_rule)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.target_rel_residual >= 0.0) {
            return Err(Error::invalid("target relative residual must be nonnegative"));
        }
        if self.record_spectrum_every == Some(0) {
            return Err(Error::invalid("record_spectrum_every must be positive"));
        }
        let eta_bar_ok = |e: f64| e > 0.0 && e <= 1.0;
        match self.step_rule {
            StepRule::TheoremSmooth { eta_bar } | StepRule::TheoremRelu { eta_bar } => {
                if !eta_bar_ok(eta_bar) {
                    return Err(Error::invalid(format!("eta_bar must lie in (0, 1], got {eta_bar}")));
                }
            }
            StepRule::TheoremSgd { eta_bar, nu } => {
                if !eta_bar_ok(eta_bar) {
                    return Err(Error::invalid(format!("eta_bar must lie in (0, 1], got {eta_bar}")));
                }
                if !(nu >= 3.0) {
                    return Err(Error::invalid(format!("nu must be at least 3, got {nu}")));
                }
            }
            StepRule::Fixed { eta } => {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::invalid(format!("fixed step must be finite and >= 0, got {eta}")));
                }
            }
        }
        Ok(())
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Degenerate { what, value })
    }
}

fn require_b(act: Activation) -> Result<f64> {
    act.derivative_bound()
        .ok_or_else(|| Error::invalid(format!("{act} has no finite derivative bound B")))
}

/// The step size prescribed by `rule` for this dataset and activation.
pub fn theorem_step_size(data: &Dataset, act: Activation, rule: StepRule) -> Result<f64> {
    if let StepRule::Fixed { eta } = rule {
        return Ok(eta);
    }
    let n = data.n() as f64;
    let y2 = positive("label norm", data.y_norm())?.powi(2);
    let x2 = positive("spectral norm of X", op_norm(data.x())?)?.powi(2);
    match rule {
        StepRule::TheoremSmooth { eta_bar } => {
            let b = require_b(act)?;
            Ok(n * eta_bar / (2.0 * b * b * y2 * x2))
        }
        StepRule::TheoremRelu { eta_bar } => Ok(n * eta_bar / (3.0 * y2 * x2)),
        StepRule::TheoremSgd { eta_bar, nu } => {
            let b = require_b(act)?;
            let mu = spectra::mu(act)?;
            let s = min_singular(&khatri_rao_power(data.x(), 2)?)?;
            Ok(mu * mu / (9.0 * nu * b.powi(4)) * (n / y2) * (s * s / x2) * eta_bar)
        }
        StepRule::Fixed { .. } => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Update counts at which the entries below were recorded (every update for
    /// GD, every `n` updates for SGD, always starting at 0).
    pub recorded_iters: Vec<usize>,
    pub residual_norms: Vec<f64>,
    pub frob_dist_to_init: Vec<f64>,
    /// Empty when spectral-distance tracking is switched off.
    pub spec_dist_to_init: Vec<f64>,
    pub path_length: Vec<f64>,
    pub step_size_used: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub label_norm: f64,
    pub jacobian_min_sing_samples: Vec<(usize, f64)>,
    /// ReLU only: `(τ, sign_flip_count(W_τ, W₀, X))`.
    pub sign_flip_samples: Vec<(usize, f64)>,
}

impl TrainTrace {
    fn new(step: f64, label_norm: f64) -> Self {
        Self {
            recorded_iters: Vec::new(),
            residual_norms: Vec::new(),
            frob_dist_to_init: Vec::new(),
            spec_dist_to_init: Vec::new(),
            path_length: Vec::new(),
            step_size_used: step,
            iterations_run: 0,
            converged: false,
            label_norm,
            jacobian_min_sing_samples: Vec::new(),
            sign_flip_samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.residual_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual_norms.is_empty()
    }

    pub fn initial_residual(&self) -> Option<f64> {
        self.residual_norms.first().copied()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_norms.last().copied()
    }

    pub fn final_rel_residual(&self) -> Option<f64> {
        self.final_residual().map(|r| rel(r, self.label_norm))
    }

    pub fn total_path_length(&self) -> f64 {
        self.path_length.last().copied().unwrap_or(0.0)
    }

    /// One row per recorded point: `iter,residual,frob_dist,spec_dist,path_length`.
    /// `spec_dist` is left blank when it was not tracked.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,residual,frob_dist,spec_dist,path_length\n");
        for t in 0..self.len() {
            let spec = self
                .spec_dist_to_init
                .get(t)
                .map(|v| format!("{v:.17e}"))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:.17e},{:.17e},{},{:.17e}",
                self.recorded_iters[t],
                self.residual_norms[t],
                self.frob_dist_to_init[t],
                spec,
                self.path_length[t]
            );
        }
        s
    }
}

fn rel(r: f64, y_norm: f64) -> f64 {
    if y_norm > 0.0 {
        r / y_norm
    } else {
        r
    }
}

struct Recorder<'a> {
    data: &'a Dataset,
    w0: Matrix,
    config: &'a TrainConfig,
    trace: TrainTrace,
    path: f64,
    initial_loss: f64,
}

impl<'a> Recorder<'a> {
    fn new(net: &ShallowNet, data: &'a Dataset, config: &'a TrainConfig, step: f64) -> Self {
        Self {
            data,
            w0: net.w().clone(),
            config,
            trace: TrainTrace::new(step, data.y_norm()),
            path: 0.0,
            initial_loss: f64::NAN,
        }
    }

    fn record(&mut self, net: &ShallowNet, iter: usize, residual_norm: f64) -> Result<()> {
        let diff = net.w().sub(&self.w0)?;
        let t = &mut self.trace;
        t.recorded_iters.push(iter);
        t.residual_norms.push(residual_norm);
        t.frob_dist_to_init.push(diff.frobenius_norm());
        t.path_length.push(self.path);
        if self.config.track_spectral_distance {
            let s = match spectral_norm(&diff, 1e-10) {
                Ok(s) => s,
                Err(Error::NoConvergence { .. }) => op_norm(&diff)?,
                Err(e) => return Err(e),
            };
            t.spec_dist_to_init.push(s);
        }
        let point = t.len() - 1;
        if let Some(every) = self.config.record_spectrum_every {
            if point.is_multiple_of(every) {
                t.jacobian_min_sing_samples
                    .push((iter, jacobian_min_sing_at(net, self.data.x())?));
                if net.activation() == Activation::Relu {
                    t.sign_flip_samples
                        .push((iter, sign_flip_count(net.w(), &self.w0, self.data.x())?));
                }
            }
        }
        Ok(())
    }

    /// Records the point and reports whether the target is met. Divergence
    /// (non-finite loss or growth past [`DIVERGENCE_FACTOR`]) is an error.
    fn observe(&mut self, net: &ShallowNet, iter: usize, residual: &[f64]) -> Result<bool> {
        let rn = norm2(residual);
        let loss = 0.5 * rn * rn;
        if self.trace.is_empty() {
            self.initial_loss = loss;
        }
        if !loss.is_finite() {
            return Err(self.diverged(iter, format!("loss became {loss}")));
        }
        if self.initial_loss > 0.0 && loss > DIVERGENCE_FACTOR * self.initial_loss {
            return Err(self.diverged(
                iter,
                format!("loss {loss:e} exceeds {DIVERGENCE_FACTOR:e} times the initial loss"),
            ));
        }
        self.record(net, iter, rn)?;
        Ok(rel(rn, self.data.y_norm()) <= self.config.target_rel_residual)
    }

    fn diverged(&mut self, iteration: usize, reason: String) -> Error {
        let mut trace = std::mem::replace(&mut self.trace, TrainTrace::new(0.0, 0.0));
        trace.iterations_run = iteration;
        Error::Diverged {
            iteration,
            reason,
            trace: Box::new(trace),
        }
    }

    fn finish(mut self, iterations: usize, converged: bool) -> TrainTrace {
        self.trace.iterations_run = iterations;
        self.trace.converged = converged;
        self.trace
    }
}

/// `W ← W − η g`, returning `‖W_new − W_old‖_F` as actually applied.
fn apply_step(net: &mut ShallowNet, eta: f64, g: &Matrix) -> f64 {
    let mut sq = 0.0;
    for (w, &gi) in net.w_mut().as_mut_slice().iter_mut().zip(g.as_slice()) {
        let old = *w;
        *w = old - eta * gi;
        let d = *w - old;
        sq += d * d;
    }
    sq.sqrt()
}

fn check_shapes(net: &ShallowNet, data: &Dataset) -> Result<()> {
    if net.d() != data.d() {
        return Err(Error::DimensionMismatch {
            op: "train",
            left: net.w().shape(),
            right: data.x().shape(),
        });
    }
    Ok(())
}

/// Full-batch gradient descent; stops as soon as the relative residual is at
/// or below the target (checked at every iterate, including `W₀`).
pub fn gd_train(net: &mut ShallowNet, data: &Dataset, config: &TrainConfig) -> Result<TrainTrace> {
    config.validate()?;
    check_shapes(net, data)?;
    if config.algorithm != Algorithm::Gd {
        return Err(Error::invalid("gd_train needs algorithm = gd"));
    }
    let eta = theorem_step_size(data, net.activation(), config.step_rule)?;
    let mut rec = Recorder::new(net, data, config, eta);
    let mut r = net.residual(data)?;
    let mut done = rec.observe(net, 0, &r)?;
    let mut iters = 0;
    while !done && iters < config.max_iters {
        let g = net.jtv(data.x(), &r)?;
        rec.path += apply_step(net, eta, &g);
        iters += 1;
        r = net.residual(data)?;
        done = rec.observe(net, iters, &r)?;
    }
    Ok(rec.finish(iters, done))
}

/// Single-sample SGD, `W ← W − η (f(x_γ) − y_γ) ∇f(x_γ)` with `γ` uniform.
///
/// The full residual is evaluated every `n` updates (one epoch-equivalent)
/// and at the end; the stopping test uses those evaluations.
pub fn sgd_train(net: &mut ShallowNet, data: &Dataset, config: &TrainConfig) -> Result<TrainTrace> {
    config.validate()?;
    check_shapes(net, data)?;
    if config.algorithm != Algorithm::Sgd {
        return Err(Error::invalid("sgd_train needs algorithm = sgd"));
    }
    let eta = theorem_step_size(data, net.activation(), config.step_rule)?;
    let n = data.n();
    let mut rng = rng_from_seed(config.seed);
    let mut rec = Recorder::new(net, data, config, eta);
    let mut done = rec.observe(net, 0, &net.residual(data)?)?;
    let mut g = Matrix::zeros(net.k(), net.d());
    let mut iters = 0;
    while !done && iters < config.max_iters {
        let i = rng.random_range(0..n);
        let xi = data.x().row(i);
        let ri = net.output_at(xi) - data.y()[i];
        g.as_mut_slice().fill(0.0);
        net.accumulate_sample(&mut g, xi, ri);
        rec.path += apply_step(net, eta, &g);
        iters += 1;
        if iters % n == 0 || iters == config.max_iters {
            done = rec.observe(net, iters, &net.residual(data)?)?;
        }
    }
    Ok(rec.finish(iters, done))
}

/// Dispatches on `config.algorithm`.
pub fn train(net: &mut ShallowNet, data: &Dataset, config: &TrainConfig) -> Result<TrainTrace> {
    match config.algorithm {
        Algorithm::Gd => gd_train(net, data, config),
        Algorithm::Sgd => sgd_train(net, data, config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFit {
    pub v: Vec<f64>,
    pub residual_norm: f64,
    pub min_eig_gram: f64,
}

/// Minimum-norm interpolating output weights `v̂ = Φᵀ(ΦΦᵀ)⁻¹y`, `Φ = φ(XW₀ᵀ)`.
pub fn fit_output_layer(x: &Matrix, w0: &Matrix, act: Activation, y: &[f64]) -> Result<OutputFit> {
    if x.cols() != w0.cols() {
        return Err(Error::DimensionMismatch {
            op: "fit_output_layer",
            left: x.shape(),
            right: w0.shape(),
        });
    }
    let z = x.matmul(&w0.transpose())?;
    let phi = Matrix::from_vec(
        z.rows(),
        z.cols(),
        z.as_slice().iter().map(|&t| act.value(t)).collect(),
    )?;
    fit_output_from_features(&phi, y)
}

/// [`fit_output_layer`] for an explicit `n×k` feature matrix `Φ`.
pub fn fit_output_from_features(phi: &Matrix, y: &[f64]) -> Result<OutputFit> {
    let n = phi.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            op: "fit_output_layer",
            left: phi.shape(),
            right: (y.len(), 1),
        });
    }
    let gram = phi.gram_rows();
    let min_eig = min_eig_sym(&gram)?;
    let threshold = GRAM_REL_TOL * gram.trace() / n as f64;
    if !(min_eig > threshold) {
        return Err(Error::SingularGram { min_eig, threshold });
    }
    let l = cholesky(&gram, GRAM_REL_TOL).map_err(|_| Error::SingularGram {
        min_eig,
        threshold,
    })?;
    let alpha = cholesky_solve(&l, y)?;
    let v = phi.tr_matvec(&alpha)?;
    let fitted = phi.matvec(&v)?;
    let residual_norm = norm2(
        &fitted
            .iter()
            .zip(y)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    Ok(OutputFit {
        v,
        residual_norm,
        min_eig_gram: min_eig,
    })
}

/// Trapezoid rule for `∫₀¹ J(W_a + α(W_b − W_a)) dα` with `quad_points` nodes.
pub fn avg_jacobian(
    net_a: &ShallowNet,
    net_b: &ShallowNet,
    x: &Matrix,
    quad_points: usize,
) -> Result<Matrix> {
    if quad_points < 2 {
        return Err(Error::invalid("average Jacobian needs at least 2 quadrature points"));
    }
    if net_a.w().shape() != net_b.w().shape() {
        return Err(Error::DimensionMismatch {
            op: "avg_jacobian",
            left: net_a.w().shape(),
            right: net_b.w().shape(),
        });
    }
    if net_a.v() != net_b.v() || net_a.activation() != net_b.activation() {
        return Err(Error::invalid(
            "average Jacobian endpoints must share output weights and activation",
        ));
    }
    let dw = net_b.w().sub(net_a.w())?;
    let h = 1.0 / (quad_points - 1) as f64;
    let mut acc: Option<Matrix> = None;
    let mut probe = net_a.clone();
    for i in 0..quad_points {
        let alpha = i as f64 * h;
        probe.set_w(net_a.w().add(&dw.scale(alpha))?)?;
        let weight = if i == 0 || i == quad_points - 1 { 0.5 * h } else { h };
        let j = probe.jacobian(x)?.scale(weight);
        acc = Some(match acc {
            None => j,
            Some(a) => a.add(&j)?,
        });
    }
    Ok(acc.expect("at least two nodes"))
}

/// `σ_min(J(W))` from the materialized Jacobian.
pub fn jacobian_min_sing_at(net: &ShallowNet, x: &Matrix) -> Result<f64> {
    min_singular(&net.jacobian(x)?)
}

/// The ReLU sign-flip budget `2 m₀²` with `m₀ = ‖v‖ √λ / (√200 ‖v‖_∞ ‖X‖)`,
/// together with `m₀` and the `m₀`-th smallest `|W₀ x_i|` over samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignFlipBudget {
    pub m0: f64,
    pub budget: f64,
    /// `min_i |W₀x_i|_{m−}` with `m = max(1, ⌊m₀⌋)`.
    pub min_mth_smallest_preactivation: f64,
}

pub fn sign_flip_budget(net0: &ShallowNet, x: &Matrix, lam: f64) -> Result<SignFlipBudget> {
    let v = net0.v();
    let vinf = crate::tensorlin::inf_norm(v);
    let xn = positive("spectral norm of X", op_norm(x)?)?;
    let vinf = positive("max output weight", vinf)?;
    let m0 = norm2(v) / (200f64.sqrt() * vinf) * lam.max(0.0).sqrt() / xn;
    let m = (m0.floor() as usize).clamp(1, net0.k());
    let mut smallest = f64::INFINITY;
    for xi in x.row_iter() {
        let z = net0.w().matvec(xi)?;
        smallest = smallest.min(mth_smallest_abs(&z, m)?);
    }
    Ok(SignFlipBudget {
        m0,
        budget: 2.0 * m0 * m0,
        min_mth_smallest_preactivation: smallest,
    })
}
