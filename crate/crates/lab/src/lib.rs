//! Experiment front end for `overparam-core`: dataset generation and I/O,
//! phase-transition sweeps over `(k, d)`, grid output, and the
//! `overparam-lab` command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod sweep;

pub use error::{LabError, LabResult};
