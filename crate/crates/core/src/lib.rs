//! Training-free test-time support-set tuning for zero-shot video
//! classification over precomputed embeddings.
//!
//! Given class-text embeddings, a generated support set of video features,
//! and augmented views of one test video, the pipeline dilates the support
//! set (multi-prompt composition) and erodes it (gradient-based entropy
//! minimization over factorized video/frame weights), then predicts a
//! class.
//!
//! The numeric kernels are generic over the scalar element type via
//! [`scalar::Scalar`]; bundles are stored as `f32` (matching the on-disk
//! format) and the tuning pipeline runs at `f64`. Use the aliases below
//! for the common instantiations.

pub mod data;
pub mod eval;
pub mod numerics;
pub mod predict;
pub mod rng;
pub mod scalar;
pub mod tuner;

pub use scalar::Scalar;

/// Storage-precision matrix (what the bundle format holds).
pub type Mat32 = numerics::DenseMatrix<f32>;
/// Compute-precision matrix (what the tuning pipeline runs on).
pub type Mat64 = numerics::DenseMatrix<f64>;
/// Storage-precision `videos x frames x dim` block.
pub type Block32 = numerics::FeatureBlock<f32>;
/// Compute-precision `videos x frames x dim` block.
pub type Block64 = numerics::FeatureBlock<f64>;

pub type StoredSupportSet = data::SupportSetBundle<f32>;
pub type ComputeSupportSet = data::SupportSetBundle<f64>;
pub type StoredTestInstance = data::TestInstanceBundle<f32>;
pub type ComputeTestInstance = data::TestInstanceBundle<f64>;
pub type StoredClassText = data::ClassTextFeatures<f32>;
pub type ComputeClassText = data::ClassTextFeatures<f64>;
