//! Hermite coefficients `μ_r(f) = E[f(g) h_r(g)]`, `g ~ N(0, 1)`, where `h_r`
//! is the normalized probabilists' Hermite polynomial `He_r / √(r!)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::netcore::Activation;

pub const DEFAULT_QUAD_ORDER: usize = 120;
pub const MIN_QUAD_ORDER: usize = 40;

/// Largest tolerated change in a coefficient between quadrature orders `q` and `q + 10`.
pub const QUAD_AGREEMENT_TOL: f64 = 1e-8;

const ORDER_STEP: usize = 10;

/// Whether a coefficient is taken of `φ` itself or of its derivative `φ′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Value,
    Derivative,
}

impl Target {
    fn apply(self, act: Activation, g: f64) -> f64 {
        match self {
            Target::Value => act.value(g),
            Target::Derivative => act.derivative(g),
        }
    }
}

/// Nodes and weights for `E[f(g)] ≈ Σ wᵢ f(gᵢ)` under the standard Gaussian.
///
/// The physicists' rule for weight `e^{-x²}` is found by Newton iteration on
/// the orthonormal Hermite recurrence and mapped through `g = √2 x` with the
/// weights divided by `√π`. Nodes are returned in increasing order.
pub fn gauss_hermite_rule(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::invalid("quadrature order must be positive"));
    }
    let n = order;
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Quadrature {
                order,
                next_order: order,
                difference: f64::NAN,
            });
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let scale = PI.sqrt().recip();
    let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v * scale).collect();
    nodes.reverse();
    weights.reverse();
    Ok((nodes, weights))
}

/// `h_0(g), …, h_r(g)`.
pub fn normalized_hermite(r: usize, g: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(r + 1);
    h.push(1.0);
    if r >= 1 {
        h.push(g);
    }
    for m in 1..r {
        let mf = m as f64;
        let next = (g * h[m] - mf.sqrt() * h[m - 1]) / (mf + 1.0).sqrt();
        h.push(next);
    }
    h
}

/// `He_m(0)`.
fn he_at_zero(m: usize) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    let mut v = 1.0;
    let mut j = 2;
    while j <= m {
        v *= -((j - 1) as f64);
        j += 2;
    }
    v
}

fn sqrt_factorial(r: usize) -> f64 {
    (1..=r).map(|j| (j as f64).sqrt()).product()
}

fn gaussian_density_at_zero() -> f64 {
    (2.0 * PI).sqrt().recip()
}

/// Closed forms for the ReLU kink, where polynomial quadrature converges poorly.
fn relu_mu(target: Target, r: usize) -> f64 {
    let p0 = gaussian_density_at_zero();
    match (target, r) {
        (Target::Derivative, 0) => 0.5,
        (Target::Derivative, r) => p0 * he_at_zero(r - 1) / sqrt_factorial(r),
        (Target::Value, 0) => p0,
        (Target::Value, 1) => 0.5,
        (Target::Value, r) => {
            p0 * (he_at_zero(r) + r as f64 * he_at_zero(r - 2)) / sqrt_factorial(r)
        }
    }
}

fn quadrature_mu(act: Activation, target: Target, r: usize, order: usize) -> Result<f64> {
    let (g, w) = gauss_hermite_rule(order)?;
    Ok(g.iter()
        .zip(&w)
        .map(|(&gi, &wi)| wi * target.apply(act, gi) * normalized_hermite(r, gi)[r])
        .sum())
}

/// `μ_r` of `φ` or `φ′`.
///
/// Quadrature is cross-checked against order `quad_order + 10`; a change
/// above [`QUAD_AGREEMENT_TOL`] is reported as [`Error::Quadrature`].
pub fn hermite_mu(act: Activation, target: Target, r: usize, quad_order: usize) -> Result<f64> {
    if quad_order < MIN_QUAD_ORDER {
        return Err(Error::invalid(format!(
            "quadrature order must be at least {MIN_QUAD_ORDER}, got {quad_order}"
        )));
    }
    if act == Activation::Relu {
        return Ok(relu_mu(target, r));
    }
    let a = quadrature_mu(act, target, r, quad_order)?;
    let b = quadrature_mu(act, target, r, quad_order + ORDER_STEP)?;
    let difference = (a - b).abs();
    if difference > QUAD_AGREEMENT_TOL {
        return Err(Error::Quadrature {
            order: quad_order,
            next_order: quad_order + ORDER_STEP,
            difference,
        });
    }
    Ok(b)
}

/// `μ_φ = E[g φ′(g)] = μ_1(φ′)`.
pub fn mu(act: Activation) -> Result<f64> {
    hermite_mu(act, Target::Derivative, 1, DEFAULT_QUAD_ORDER)
}

/// `μ̃_φ = E[φ′(g)] = μ_0(φ′)`.
pub fn mu_tilde(act: Activation) -> Result<f64> {
    hermite_mu(act, Target::Derivative, 0, DEFAULT_QUAD_ORDER)
}

/// `γ_φ = E[φ(g)(g² − 1)]/√2 = μ_2(φ)`.
pub fn gamma(act: Activation) -> Result<f64> {
    hermite_mu(act, Target::Value, 2, DEFAULT_QUAD_ORDER)
}

/// `E[f(g)²]` for the chosen target, the right-hand side of Parseval's identity.
pub fn gaussian_square_mean(act: Activation, target: Target) -> Result<f64> {
    match (act, target) {
        (Activation::Relu, _) => Ok(0.5),
        _ => {
            let (g, w) = gauss_hermite_rule(DEFAULT_QUAD_ORDER)?;
            Ok(g.iter()
                .zip(&w)
                .map(|(&gi, &wi)| wi * target.apply(act, gi).powi(2))
                .sum())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_gaussian_moments() {
        let (g, w) = gauss_hermite_rule(60).unwrap();
        let m = |p: i32| g.iter().zip(&w).map(|(x, wi)| wi * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
        assert!(g.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn hermite_orthonormality() {
        let (g, w) = gauss_hermite_rule(80).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let ip: f64 = g
                    .iter()
                    .zip(&w)
                    .map(|(&x, wi)| {
                        let h = normalized_hermite(8, x);
                        wi * h[a] * h[b]
                    })
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-10, "({a},{b}) -> {ip}");
            }
        }
    }

    #[test]
    fn he_zero_values() {
        assert_eq!(he_at_zero(0), 1.0);
        assert_eq!(he_at_zero(2), -1.0);
        assert_eq!(he_at_zero(4), 3.0);
        assert_eq!(he_at_zero(6), -15.0);
        assert_eq!(he_at_zero(5), 0.0);
    }

    #[test]
    fn quadratic_moments() {
        let q = Activation::Quadratic;
        assert!((mu(q).unwrap() - 1.0).abs() < 1e-12);
        assert!(mu_tilde(q).unwrap().abs() < 1e-12);
        // z²/2 = (He_2 + 1)/2, so μ_2 = √2/2.
        assert!((gamma(q).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn low_order_is_rejected() {
        assert!(hermite_mu(Activation::Softplus, Target::Value, 1, 39).is_err());
    }
}
