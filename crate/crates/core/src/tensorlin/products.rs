use crate::error::{Error, Result};

use super::Matrix;

/// Default ceiling on any single materialized matrix (1 GiB of `f64`s).
pub const DEFAULT_MEMORY_CAP_BYTES: u128 = 1 << 30;

pub(crate) fn check_memory(rows: usize, cols: u128, cap: u128) -> Result<usize> {
    let bytes = (rows as u128) * cols * 8;
    if bytes > cap {
        return Err(Error::MemoryCap {
            rows,
            cols: usize::try_from(cols).unwrap_or(usize::MAX),
            bytes,
            cap,
        });
    }
    Ok(cols as usize)
}

/// Row-wise Kronecker product: row `i` of the result is `a_i ⊗ b_i`.
pub fn khatri_rao_rows(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            op: "khatri_rao_rows",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, n) = (a.cols(), b.cols());
    let cols = check_memory(a.rows(), (m as u128) * (n as u128), DEFAULT_MEMORY_CAP_BYTES)?;
    let mut out = Vec::with_capacity(a.rows() * cols);
    for (ra, rb) in a.row_iter().zip(b.row_iter()) {
        for &x in ra {
            out.extend(rb.iter().map(|&y| x * y));
        }
    }
    Ok(Matrix::from_raw(a.rows(), cols, out))
}

/// `r`-fold row-wise Kronecker power `X^{*r}` with the default memory cap.
pub fn khatri_rao_power(x: &Matrix, r: usize) -> Result<Matrix> {
    khatri_rao_power_capped(x, r, DEFAULT_MEMORY_CAP_BYTES)
}

pub fn khatri_rao_power_capped(x: &Matrix, r: usize, cap_bytes: u128) -> Result<Matrix> {
    if r == 0 {
        return Err(Error::invalid("Khatri-Rao power must be at least 1"));
    }
    let d = x.cols() as u128;
    let mut cols: u128 = 1;
    for _ in 0..r {
        cols = cols
            .checked_mul(d)
            .filter(|&c| c <= usize::MAX as u128)
            .ok_or_else(|| {
                Error::invalid(format!("{}^{r} columns overflow the address space", x.cols()))
            })?;
    }
    check_memory(x.rows(), cols, cap_bytes)?;
    let mut acc = x.clone();
    for _ in 1..r {
        acc = khatri_rao_rows(&acc, x)?;
    }
    Ok(acc)
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}
