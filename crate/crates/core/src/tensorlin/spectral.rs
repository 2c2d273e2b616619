use crate::error::{Error, Result};

use super::matrix::{dot, norm2};
use super::Matrix;

/// Entrywise asymmetry accepted by the symmetric eigensolvers.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative slack below zero still treated as a nonnegative eigenvalue.
pub const PSD_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;

fn power_iteration_cap(m: &Matrix) -> usize {
    10 * m.rows().max(m.cols()) + 1000
}

/// Gram matrix of the smaller side; its eigenvalues are the squared singular values.
fn small_gram(m: &Matrix) -> Matrix {
    if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_cols()
    }
}

struct PowerRun {
    rho: f64,
    converged: bool,
}

fn power_run(g: &Matrix, start: Vec<f64>, tol: f64, cap: usize) -> PowerRun {
    let mut v = start;
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut rho = 0.0;
    for _ in 0..cap {
        let gv = g.matvec(&v).expect("square Gram");
        rho = dot(&v, &gv);
        let gnorm = norm2(&gv);
        if gnorm == 0.0 {
            return PowerRun { rho: 0.0, converged: true };
        }
        let res = gv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - rho * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if res <= tol * rho.abs() {
            return PowerRun { rho, converged: true };
        }
        v = gv.into_iter().map(|x| x / gnorm).collect();
    }
    PowerRun { rho, converged: false }
}

/// Largest singular value by power iteration on the smaller Gram matrix.
///
/// Two deterministic starts are used: the normalized all-ones vector and a
/// fixed quasi-random perturbation of it. The second run guards against the
/// first start being (nearly) orthogonal to the top singular direction; the
/// larger converged estimate is returned.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let g = small_gram(m);
    let cap = power_iteration_cap(m);
    let n = g.rows();
    let ones = vec![1.0; n];
    let perturbed = (0..n)
        .map(|i| 1.0 + ((i + 1) as f64 * 0.754_877_666_246_692_7).fract())
        .collect();
    let a = power_run(&g, ones, tol, cap);
    let b = power_run(&g, perturbed, tol, cap);
    let best = if a.rho >= b.rho { a } else { b };
    let sigma = best.rho.max(0.0).sqrt();
    if best.converged {
        Ok(sigma)
    } else {
        Err(Error::NoConvergence {
            iterations: cap,
            best_estimate: sigma,
        })
    }
}

/// `σ_max(M)` to near machine precision: power iteration, with the full
/// one-sided Jacobi SVD as a fallback when the top of the spectrum is too
/// clustered for power iteration to resolve within its cap.
pub fn op_norm(m: &Matrix) -> Result<f64> {
    match spectral_norm(m, 1e-12) {
        Ok(s) => Ok(s),
        Err(Error::NoConvergence { .. }) => Ok(singular_values(m)?[0]),
        Err(e) => Err(e),
    }
}

/// All singular values in descending order (length `min(rows, cols)`).
///
/// One-sided Jacobi (Hestenes) orthogonalization of the shorter dimension's
/// vectors. Unlike square-rooting Gram eigenvalues, this resolves small
/// singular values to roughly `eps·σ_max` absolute accuracy instead of
/// `sqrt(eps)·σ_max`.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    // With rows <= cols the rows of M are the columns of Mᵀ, which has the
    // same singular values; otherwise work on the columns of M directly.
    let mut cols: Vec<Vec<f64>> = if m.rows() <= m.cols() {
        m.row_iter().map(<[f64]>::to_vec).collect()
    } else {
        m.transpose().row_iter().map(<[f64]>::to_vec).collect()
    };
    let c = cols.len();
    let eps = f64::EPSILON;
    // Columns below this squared norm are numerically zero; the angle to them is noise.
    let negligible = (eps * m.frobenius_norm()).powi(2);
    // Rounding in the inner products keeps cosines near `sqrt(len)·eps` even when converged.
    let orth_tol = eps * (cols.first().map_or(1, Vec::len).max(4) as f64).sqrt();
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        let mut worst: f64 = 0.0;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(off);
                if off <= orth_tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *x = cs * a - sn * b;
                    *y = sn * a + cs * b;
                }
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(Error::EigenFailure {
                sweeps,
                off_diagonal: worst,
            });
        }
    }
    let mut s: Vec<f64> = cols.iter().map(|v| norm2(v)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn min_singular(m: &Matrix) -> Result<f64> {
    Ok(*singular_values(m)?.last().expect("nonempty matrix"))
}

fn symmetrized(s: &Matrix) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch {
            op: "symmetric eigensolver",
            left: s.shape(),
            right: (s.cols(), s.rows()),
        });
    }
    let t = s.transpose();
    let dev = s.max_abs_diff(&t);
    if dev > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { max_deviation: dev });
    }
    Ok(s.zip_with(&t, "symmetrize", |a, b| 0.5 * (a + b))
        .expect("same shape"))
}

/// Eigenvalues of the symmetrized `(S+Sᵀ)/2` in ascending order, by cyclic
/// two-sided Jacobi rotations.
pub fn sym_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    let mut a = symmetrized(s)?;
    let n = a.rows();
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let off_mass = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off_mass(&a) > f64::EPSILON * scale {
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(Error::EigenFailure {
                sweeps,
                off_diagonal: off_mass(&a),
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                if apq.abs() <= f64::EPSILON * 1e-3 * scale {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
        sweeps += 1;
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

pub fn min_eig_sym(s: &Matrix) -> Result<f64> {
    Ok(sym_eigenvalues(s)?[0])
}

pub fn max_eig_sym(s: &Matrix) -> Result<f64> {
    Ok(*sym_eigenvalues(s)?.last().expect("nonempty"))
}

/// Whether `S` is PSD up to `-PSD_TOL·(1 + λ_max)`.
pub fn is_psd(s: &Matrix) -> Result<bool> {
    let ev = sym_eigenvalues(s)?;
    let top = *ev.last().expect("nonempty");
    Ok(ev[0] >= -PSD_TOL * (1.0 + top.max(0.0)))
}
