use crate::error::{Error, Result};

use super::Matrix;

/// Lower-triangular `L` with `S = L Lᵀ`.
///
/// Fails with [`Error::Degenerate`] when a pivot drops to or below
/// `rel_pivot_tol · max_i S_ii`.
pub fn cholesky(s: &Matrix, rel_pivot_tol: f64) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch {
            op: "cholesky",
            left: s.shape(),
            right: (s.cols(), s.rows()),
        });
    }
    let n = s.rows();
    let max_diag = (0..n).fold(0.0f64, |m, i| m.max(s[(i, i)]));
    let floor = rel_pivot_tol * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = s[(j, j)];
        for p in 0..j {
            diag -= l[(j, p)] * l[(j, p)];
        }
        if !(diag > floor) {
            return Err(Error::Degenerate {
                what: "Cholesky pivot",
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut v = s[(i, j)];
            for p in 0..j {
                v -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the factor from [`cholesky`].
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            op: "cholesky_solve",
            left: l.shape(),
            right: (b.len(), 1),
        });
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for p in 0..i {
            z[i] -= l[(i, p)] * z[p];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            z[i] -= l[(p, i)] * z[p];
        }
        z[i] /= l[(i, i)];
    }
    Ok(z)
}
