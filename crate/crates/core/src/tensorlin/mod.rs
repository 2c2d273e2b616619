//! Dense linear algebra on small row-major matrices.
//!
//! Eigenvalues come from cyclic Jacobi rotations and singular values from
//! one-sided Jacobi, both of which are accurate and simple at the sizes this
//! crate meets (a few thousand rows or columns at most on the short side).

mod matrix;
mod products;
mod solve;
mod spectral;

pub use matrix::{axpy, dot, inf_norm, norm2, Matrix};
pub(crate) use products::check_memory;
pub use products::{
    hadamard, khatri_rao_power, khatri_rao_power_capped, khatri_rao_rows,
    DEFAULT_MEMORY_CAP_BYTES,
};
pub use solve::{cholesky, cholesky_solve};
pub use spectral::{
    is_psd, max_eig_sym, min_eig_sym, min_singular, op_norm, singular_values, spectral_norm,
    sym_eigenvalues, PSD_TOL, SYMMETRY_TOL,
};
