//! Temporal-aware support-set erosion: factorized weights, frame sampling,
//! the confidence-filtered marginal-entropy objective, analytic gradients
//! with a finite-difference oracle, AdamW, and the multi-scale schedule.

pub mod grad;
mod loss;
mod optimizer;
mod schedule;
mod session;
mod weights;

pub use grad::{
    evaluate_loss, finite_difference_gradients, loss_gradients, FdResult, GradInputs, GradResult,
    SelectionPlan,
};
pub use loss::{marginal_entropy_loss, ConfidenceFilter};
pub use optimizer::{adamw_step, AdamwConfig, OptimizerState};
pub use schedule::{select_frames, SamplingStrategy, Stage, TuningSchedule};
pub use session::{final_predict, full_scale_loss, tune, TraceRecord, TuningTrace, WeightMask};
pub use weights::{apply_weights, FactorizedWeights};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid tuner config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}; aborting with trace attached")]
    NonFiniteLoss {
        step: usize,
        trace: Box<TuningTrace>,
    },
    #[error(transparent)]
    Predict(#[from] crate::predict::PredictError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}
