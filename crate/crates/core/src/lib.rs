//! Numerical toolkit for moderately overparameterized one-hidden-layer networks
//! `x -> vᵀ φ(W x)` trained over the input-to-hidden weights `W`.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensorlin`]: dense matrices, Khatri-Rao and Hadamard products, spectral
//!   norms, singular values and symmetric eigenvalues.
//! - [`netcore`]: activations, datasets, the network model, its Jacobian in
//!   block, Khatri-Rao and matrix-free forms, gradients and the balanced
//!   output-weight initialization.
//! - [`spectra`]: Monte-Carlo and closed-form covariance matrices, Hermite
//!   coefficients and the eigenvalue lower bounds built from them.
//! - [`trainer`]: gradient descent and SGD with full convergence traces, the
//!   output-layer least-squares fit and trajectory diagnostics.
//! - [`bounds`]: condition numbers, overparameterization margins, predicted
//!   rates and radius/path bounds paired with empirical measurements.
//!
//! Every operation is a pure function of its inputs; randomness always flows
//! from an explicit `u64` seed through [`seeding`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod netcore;
pub mod seeding;
pub mod spectra;
pub mod tensorlin;
pub mod trainer;

pub use error::{Error, Result};
pub use netcore::{Activation, Dataset, ShallowNet};
pub use tensorlin::Matrix;
