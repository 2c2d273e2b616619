//! The one-hidden-layer model `f(x; W) = vᵀ φ(W x)`.
//!
//! Parameters are flattened with the row-concatenation convention
//! `vect(W) = [w_1; w_2; …; w_k]`, so Jacobian column `ℓ·d + j` is the
//! derivative with respect to `W[ℓ, j]`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_from_seed;
use crate::tensorlin::{
    check_memory, dot, hadamard, inf_norm, khatri_rao_rows, norm2, op_norm, Matrix,
    DEFAULT_MEMORY_CAP_BYTES,
};

/// Tolerance on `‖x_i‖ = 1` accepted by [`Dataset::new`].
pub const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `log(1 + e^z)`.
    Softplus,
    /// `max(0, z)` with generalized derivative `1{z ≥ 0}`.
    Relu,
    /// `z²/2`, an analytic reference whose covariance has a closed form.
    Quadratic,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Softplus,
        Activation::Relu,
        Activation::Quadratic,
        Activation::Identity,
    ];

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Relu => z.max(0.0),
            Activation::Quadratic => 0.5 * z * z,
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Relu => {
                if z >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Quadratic => z,
            Activation::Identity => 1.0,
        }
    }

    /// `B` with `|φ′| ≤ B`, if finite.
    pub fn derivative_bound(self) -> Option<f64> {
        match self {
            Activation::Softplus | Activation::Relu | Activation::Identity => Some(1.0),
            Activation::Quadratic => None,
        }
    }

    /// `M` with `|φ″| ≤ M`, if the activation is smooth with a bounded second derivative.
    ///
    /// Softplus has `φ″ = σ(1 − σ) ≤ 1/4`; the customary value `M = 1` is kept.
    pub fn second_derivative_bound(self) -> Option<f64> {
        match self {
            Activation::Softplus | Activation::Quadratic => Some(1.0),
            Activation::Identity => Some(0.0),
            Activation::Relu => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        self.second_derivative_bound().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
            Activation::Quadratic => "quadratic",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown activation '{s}' (expected softplus, relu, quadratic or identity)"
                ))
            })
    }
}

/// Inputs with unit-norm rows and their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                op: "dataset labels",
                left: x.shape(),
                right: (y.len(), 1),
            });
        }
        if let Some((i, _)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("label {i} is not finite")));
        }
        check_unit_rows(&x)?;
        Ok(Self { x, y })
    }

    /// Scales every row of `x` to unit norm first.
    pub fn normalized(mut x: Matrix, y: Vec<f64>) -> Result<Self> {
        for i in 0..x.rows() {
            let row = x.row_mut(i);
            let nrm = norm2(row);
            if nrm == 0.0 {
                return Err(Error::invalid(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= nrm);
        }
        Self::new(x, y)
    }

    #[inline]
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn y_norm(&self) -> f64 {
        norm2(&self.y)
    }

    pub fn into_parts(self) -> (Matrix, Vec<f64>) {
        (self.x, self.y)
    }
}

pub(crate) fn check_unit_rows(x: &Matrix) -> Result<()> {
    for (i, r) in x.row_iter().enumerate() {
        let nrm = norm2(r);
        if (nrm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!(
                "row {i} has norm {nrm}, expected unit norm"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowNet {
    w: Matrix,
    v: Vec<f64>,
    activation: Activation,
}

impl ShallowNet {
    pub fn new(w: Matrix, v: Vec<f64>, activation: Activation) -> Result<Self> {
        if v.len() != w.rows() {
            return Err(Error::DimensionMismatch {
                op: "output weights",
                left: w.shape(),
                right: (v.len(), 1),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("output weights must be finite"));
        }
        Ok(Self { w, v, activation })
    }

    #[inline]
    pub fn w(&self) -> &Matrix {
        &self.w
    }

    #[inline]
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Hidden width `k`.
    #[inline]
    pub fn k(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.w.cols()
    }

    pub fn set_w(&mut self, w: Matrix) -> Result<()> {
        if w.shape() != self.w.shape() {
            return Err(Error::DimensionMismatch {
                op: "set_w",
                left: self.w.shape(),
                right: w.shape(),
            });
        }
        self.w = w;
        Ok(())
    }

    pub(crate) fn w_mut(&mut self) -> &mut Matrix {
        &mut self.w
    }

    fn check_input(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.w.cols() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.w.shape(),
                right: x.shape(),
            });
        }
        Ok(())
    }

    /// Output on a single input row.
    #[inline]
    pub fn output_at(&self, x: &[f64]) -> f64 {
        self.w
            .row_iter()
            .zip(&self.v)
            .map(|(w, &v)| v * self.activation.value(dot(w, x)))
            .sum()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x, "forward")?;
        Ok(x.row_iter().map(|xi| self.output_at(xi)).collect())
    }

    /// `f(W) − y`.
    pub fn residual(&self, data: &Dataset) -> Result<Vec<f64>> {
        let f = self.forward(data.x())?;
        Ok(f.iter().zip(data.y()).map(|(a, b)| a - b).collect())
    }

    /// `½‖f(W) − y‖²`.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let r = self.residual(data)?;
        Ok(0.5 * dot(&r, &r))
    }

    /// `n×k` matrix with entries `v_ℓ φ′(⟨w_ℓ, x_i⟩)`.
    fn scaled_derivatives(&self, x: &Matrix) -> Matrix {
        let (n, k) = (x.rows(), self.k());
        let mut out = Vec::with_capacity(n * k);
        for xi in x.row_iter() {
            out.extend(
                self.w
                    .row_iter()
                    .zip(&self.v)
                    .map(|(w, &v)| v * self.activation.derivative(dot(w, xi))),
            );
        }
        Matrix::from_raw(n, k, out)
    }

    /// Materialized `n×kd` Jacobian, block `ℓ` equal to `v_ℓ diag(φ′(X w_ℓ)) X`.
    pub fn jacobian(&self, x: &Matrix) -> Result<Matrix> {
        self.jacobian_capped(x, DEFAULT_MEMORY_CAP_BYTES)
    }

    pub fn jacobian_capped(&self, x: &Matrix, cap_bytes: u128) -> Result<Matrix> {
        self.check_input(x, "jacobian")?;
        let (n, k, d) = (x.rows(), self.k(), self.d());
        let cols = check_memory(n, (k as u128) * (d as u128), cap_bytes)?;
        let mut j = Matrix::zeros(n, cols);
        for (i, xi) in x.row_iter().enumerate() {
            let row = j.row_mut(i);
            for (l, (w, &v)) in self.w.row_iter().zip(&self.v).enumerate() {
                let s = v * self.activation.derivative(dot(w, xi));
                for (dst, &xv) in row[l * d..(l + 1) * d].iter_mut().zip(xi) {
                    *dst = s * xv;
                }
            }
        }
        Ok(j)
    }

    /// The same Jacobian assembled as `(φ′(XWᵀ) diag(v)) * X` (row-wise Khatri-Rao).
    pub fn jacobian_khatri_rao(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, "jacobian")?;
        khatri_rao_rows(&self.scaled_derivatives(x), x)
    }

    /// `mat(J(W)ᵀ u) = diag(v) φ′(WXᵀ) diag(u) X`, without forming `J`.
    pub fn jtv(&self, x: &Matrix, u: &[f64]) -> Result<Matrix> {
        self.check_input(x, "jtv")?;
        if u.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                op: "jtv",
                left: x.shape(),
                right: (u.len(), 1),
            });
        }
        let mut g = Matrix::zeros(self.k(), self.d());
        for (xi, &ui) in x.row_iter().zip(u) {
            self.accumulate_sample(&mut g, xi, ui);
        }
        Ok(g)
    }

    /// Adds `u_i · ∇_W f(x_i; W)` to `g`. Shared by full-batch and per-sample updates
    /// so that both paths perform identical floating-point operations.
    #[inline]
    pub(crate) fn accumulate_sample(&self, g: &mut Matrix, xi: &[f64], ui: f64) {
        if ui == 0.0 {
            return;
        }
        let d = self.d();
        let gs = g.as_mut_slice();
        for (l, (w, &v)) in self.w.row_iter().zip(&self.v).enumerate() {
            let c = v * self.activation.derivative(dot(w, xi)) * ui;
            for (dst, &xv) in gs[l * d..(l + 1) * d].iter_mut().zip(xi) {
                *dst += c * xv;
            }
        }
    }

    /// `∇L(W) = mat(J(W)ᵀ r)` for the squared loss.
    pub fn gradient(&self, data: &Dataset) -> Result<Matrix> {
        let r = self.residual(data)?;
        self.jtv(data.x(), &r)
    }

    /// `J Jᵀ = (φ′(XWᵀ) diag(v)² φ′(WXᵀ)) ⊙ (XXᵀ)`.
    pub fn gram(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, "gram")?;
        let a = self.scaled_derivatives(x);
        hadamard(&a.gram_rows(), &x.gram_rows())
    }

    /// `√k · B · ‖v‖_∞ · ‖X‖`, an upper bound on `‖J(W)‖` valid for every `W`.
    pub fn jacobian_spectral_bound(&self, x: &Matrix) -> Result<f64> {
        self.check_input(x, "jacobian_spectral_bound")?;
        let b = self.activation.derivative_bound().ok_or_else(|| {
            Error::invalid(format!(
                "{} has an unbounded derivative",
                self.activation
            ))
        })?;
        Ok((self.k() as f64).sqrt() * b * inf_norm(&self.v) * op_norm(x)?)
    }
}

/// Network with balanced output weights and Gaussian hidden weights.
///
/// `W` has i.i.d. standard normal entries drawn row-major from the seeded
/// generator. The first `⌊k/2⌋` output weights are `+‖y‖/√(kn)`, the next
/// `⌊k/2⌋` are the negation, and for odd `k` the last one is zero.
pub fn init_theorem(
    k: usize,
    d: usize,
    activation: Activation,
    data: &Dataset,
    seed: u64,
) -> Result<ShallowNet> {
    if k < 2 {
        return Err(Error::invalid(format!("width k must be at least 2, got {k}")));
    }
    if d != data.d() {
        return Err(Error::invalid(format!(
            "input dimension {d} does not match the dataset's {}",
            data.d()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let w: Vec<f64> = (0..k * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mag = data.y_norm() / ((k * data.n()) as f64).sqrt();
    let half = k / 2;
    let v: Vec<f64> = (0..k)
        .map(|l| {
            if l < half {
                mag
            } else if l < 2 * half {
                -mag
            } else {
                0.0
            }
        })
        .collect();
    ShallowNet::new(Matrix::from_raw(k, d, w), v, activation)
}

/// `max_i ‖1{W x_i ≥ 0} − 1{W₀ x_i ≥ 0}‖₂`, the square root of the largest
/// per-sample number of ReLU pattern changes.
pub fn sign_flip_count(w: &Matrix, w0: &Matrix, x: &Matrix) -> Result<f64> {
    if w.shape() != w0.shape() {
        return Err(Error::DimensionMismatch {
            op: "sign_flip_count",
            left: w.shape(),
            right: w0.shape(),
        });
    }
    if x.cols() != w.cols() {
        return Err(Error::DimensionMismatch {
            op: "sign_flip_count",
            left: w.shape(),
            right: x.shape(),
        });
    }
    let worst = x
        .row_iter()
        .map(|xi| {
            w.row_iter()
                .zip(w0.row_iter())
                .filter(|(a, b)| (dot(a, xi) >= 0.0) != (dot(b, xi) >= 0.0))
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok((worst as f64).sqrt())
}

/// The `m`-th smallest entry of `|z|`, 1-based.
pub fn mth_smallest_abs(z: &[f64], m: usize) -> Result<f64> {
    if m == 0 || m > z.len() {
        return Err(Error::invalid(format!(
            "m = {m} is outside 1..={}",
            z.len()
        )));
    }
    let mut a: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    let (_, nth, _) = a.select_nth_unstable_by(m - 1, f64::total_cmp);
    Ok(*nth)
}
