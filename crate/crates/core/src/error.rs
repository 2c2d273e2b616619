use thiserror::Error;

use crate::trainer::TrainTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("power iteration did not converge in {iterations} iterations (best estimate {best_estimate})")]
    NoConvergence { iterations: usize, best_estimate: f64 },

    #[error("Jacobi eigensolver did not converge in {sweeps} sweeps (off-diagonal mass {off_diagonal})")]
    EigenFailure { sweeps: usize, off_diagonal: f64 },

    #[error("matrix is not symmetric: max |S - Sᵀ| entry is {max_deviation}")]
    NotSymmetric { max_deviation: f64 },

    #[error("materializing a {rows}x{cols} matrix needs {bytes} bytes, above the cap of {cap} bytes")]
    MemoryCap {
        rows: usize,
        cols: usize,
        bytes: u128,
        cap: u128,
    },

    #[error("degenerate input: {what} = {value}")]
    Degenerate { what: &'static str, value: f64 },

    #[error("feature Gram matrix is singular (min eigenvalue {min_eig}, threshold {threshold})")]
    SingularGram { min_eig: f64, threshold: f64 },

    #[error("Gauss-Hermite quadrature unstable: orders {order} and {next_order} differ by {difference}")]
    Quadrature {
        order: usize,
        next_order: usize,
        difference: f64,
    },

    #[error("rate {rate} lies outside (0, 1); inputs are outside the theorem regime")]
    OutsideRegime { rate: f64 },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        trace: Box<TrainTrace>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
