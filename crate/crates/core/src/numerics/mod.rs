//! Deterministic dense numeric kernels shared by every other module.
//!
//! All operations are pure and free of shared mutable state.

mod kernels;
mod matrix;

pub use kernels::{
    argmax, dot, entropy, kl_divergence, l2_norm, l2_normalize, softmax, topk_indices,
    Distribution, KL_EPSILON_Q,
};
pub(crate) use kernels::{entropy_f64, log_softmax_scaled};
pub use matrix::{DenseMatrix, FeatureBlock};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("vector has (near-)zero norm")]
    ZeroVector,
    #[error("softmax temperature must be positive")]
    NonPositiveTemperature,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("k={k} out of range for length {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("not a probability vector (negative entry or sum far from 1)")]
    InvalidDistribution,
}
