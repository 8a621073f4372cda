//! Embedding-bundle persistence, support-set composition, the seeded
//! synthetic generator, and dispersion statistics.

mod bundle;
mod catalog;
mod io;
mod stats;
pub mod synth;

pub use bundle::{
    compose_support_set, ClassTextFeatures, PromptCounts, Provenance, SupportSetBundle,
    TestInstanceBundle,
};
pub use catalog::{ClassCatalog, PromptSet};
pub use io::{
    load_class_text, load_support, load_test, save_class_text, save_support, save_test,
    SCHEMA_VERSION,
};
pub use stats::{dispersion_stats, ClassDispersion, DispersionReport};
pub use synth::{synth_generate, SyntheticConfig, SyntheticDataset};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt blob '{name}': expected {expected} bytes, found {actual}")]
    CorruptBlob {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("missing video for class {class}, prompt {prompt}, repeat {repeat}")]
    MissingVideo {
        class: usize,
        prompt: usize,
        repeat: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("class {class} has {provided} videos, expected K = {expected}")]
    FactorabilityViolation {
        class: usize,
        provided: usize,
        expected: usize,
    },
}

impl From<crate::numerics::NumericsError> for DataError {
    fn from(e: crate::numerics::NumericsError) -> Self {
        DataError::InvariantViolation(e.to_string())
    }
}
