//! One test-time tuning session: initialize the factorized weights at 1,
//! walk the multi-scale schedule, and take one joint AdamW step per
//! schedule step.

use serde::Serialize;

use crate::data::{ClassTextFeatures, SupportSetBundle, TestInstanceBundle};
use crate::predict::{blended_logits_for_feature, pool_support, Logits, PredictorConfig};
use crate::rng;
use crate::scalar::Scalar;
use crate::tuner::grad::{evaluate_loss, loss_gradients, GradInputs};
use crate::tuner::loss::ConfidenceFilter;
use crate::tuner::optimizer::{adamw_step, AdamwConfig, OptimizerState};
use crate::tuner::schedule::{select_frames, TuningSchedule};
use crate::tuner::weights::{apply_weights, FactorizedWeights};
use crate::tuner::TunerError;

/// One optimizer step as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub stage: usize,
    pub scale: usize,
    pub frame_indices: Vec<usize>,
    pub loss: f64,
    pub grad_norm_vid: f64,
    pub grad_norm_fr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuningTrace {
    pub records: Vec<TraceRecord>,
}

impl TuningTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// JSON-lines export, one record per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Which weight vectors actually train; a disabled vector stays exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightMask {
    pub tune_video: bool,
    pub tune_frame: bool,
}

impl Default for WeightMask {
    fn default() -> Self {
        Self {
            tune_video: true,
            tune_frame: true,
        }
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

fn check_dims<S: Scalar>(
    support: &SupportSetBundle<S>,
    test: &TestInstanceBundle<S>,
    class_text: &ClassTextFeatures<S>,
) -> Result<(), TunerError> {
    if support.frames() != test.frames() || support.dim() != test.dim() {
        return Err(TunerError::ShapeMismatch(format!(
            "support {}x{} vs test {}x{} per video",
            support.frames(),
            support.dim(),
            test.frames(),
            test.dim()
        )));
    }
    if class_text.classes() != support.classes() || class_text.dim() != support.dim() {
        return Err(TunerError::ShapeMismatch(format!(
            "class-text {}x{} vs support of {} classes, dim {}",
            class_text.classes(),
            class_text.dim(),
            support.classes(),
            support.dim()
        )));
    }
    Ok(())
}

/// Run the erosion loop; returns the tuned weights and the step trace.
#[allow(clippy::too_many_arguments)]
pub fn tune<S: Scalar>(
    support: &SupportSetBundle<S>,
    test: &TestInstanceBundle<S>,
    class_text: &ClassTextFeatures<S>,
    schedule: &TuningSchedule,
    predictor: &PredictorConfig<S>,
    filter: ConfidenceFilter,
    optimizer: &AdamwConfig,
    mask: WeightMask,
) -> Result<(FactorizedWeights<S>, TuningTrace), TunerError> {
    check_dims(support, test, class_text)?;
    schedule.validate(support.frames())?;
    let ck = support.videos();
    let t = support.frames();

    let inputs = GradInputs {
        support: &support.features,
        labels: &support.labels,
        views: &test.views,
        class_text,
        config: predictor,
        filter,
    };

    // Parameters live in one flat f64 vector: [video weights | frame weights].
    let mut params = vec![1.0f64; ck + t];
    let mut state = OptimizerState::new(ck + t, *optimizer)?;
    let mut stream = rng::stream_from_seed(schedule.rng_seed);
    let mut trace = TuningTrace::default();

    for (stage_idx, stage) in schedule.stages.iter().enumerate() {
        for _ in 0..stage.steps {
            let weights = FactorizedWeights::<S>::from_f64(&params[..ck], &params[ck..]);
            let frame_indices =
                select_frames(&weights.frame, stage.scale, schedule.strategy, &mut stream)?;
            let result = loss_gradients(&inputs, &weights, &frame_indices)?;
            if !result.loss.is_finite() {
                return Err(TunerError::NonFiniteLoss {
                    step: trace.len(),
                    trace: Box::new(trace),
                });
            }

            let mut grads = Vec::with_capacity(ck + t);
            grads.extend_from_slice(&result.grad_video);
            grads.extend_from_slice(&result.grad_frame);
            if !mask.tune_video {
                grads[..ck].fill(0.0);
            }
            if !mask.tune_frame {
                grads[ck..].fill(0.0);
            }

            trace.records.push(TraceRecord {
                stage: stage_idx,
                scale: stage.scale,
                frame_indices,
                loss: result.loss,
                grad_norm_vid: l2(&grads[..ck]),
                grad_norm_fr: l2(&grads[ck..]),
            });

            adamw_step(&mut state, &mut params, &grads)?;
            // Weight decay must not drift a frozen vector off 1.
            if !mask.tune_video {
                params[..ck].fill(1.0);
            }
            if !mask.tune_frame {
                params[ck..].fill(1.0);
            }
        }
    }

    Ok((
        FactorizedWeights::from_f64(&params[..ck], &params[ck..]),
        trace,
    ))
}

/// Post-tuning inference: apply the tuned weights, pool every frame, and
/// score the un-augmented test feature. Ties go to the smaller class index.
pub fn final_predict<S: Scalar>(
    support: &SupportSetBundle<S>,
    test: &TestInstanceBundle<S>,
    weights: &FactorizedWeights<S>,
    class_text: &ClassTextFeatures<S>,
    predictor: &PredictorConfig<S>,
) -> Result<(Logits<S>, usize), TunerError> {
    check_dims(support, test, class_text)?;
    predictor.validate()?;
    let weighted = apply_weights(&support.features, weights)?;
    let all_frames: Vec<usize> = (0..support.frames()).collect();
    let pooled = pool_support(&weighted, &all_frames);
    let pooled_original = crate::predict::pool_frames(&test.original, &all_frames)?;
    let u = crate::numerics::l2_normalize(&pooled_original)?;
    let logits = blended_logits_for_feature(
        &u,
        &pooled,
        None,
        class_text,
        &support.labels,
        predictor,
    )?;
    let predicted = logits.argmax();
    Ok((logits, predicted))
}

/// Full-scale (all frames) marginal-entropy loss of the objective under
/// `weights`, with selections recomputed honestly.
pub fn full_scale_loss<S: Scalar>(
    support: &SupportSetBundle<S>,
    test: &TestInstanceBundle<S>,
    class_text: &ClassTextFeatures<S>,
    predictor: &PredictorConfig<S>,
    filter: ConfidenceFilter,
    weights: &FactorizedWeights<S>,
) -> Result<f64, TunerError> {
    check_dims(support, test, class_text)?;
    let inputs = GradInputs {
        support: &support.features,
        labels: &support.labels,
        views: &test.views,
        class_text,
        config: predictor,
        filter,
    };
    let all_frames: Vec<usize> = (0..support.frames()).collect();
    evaluate_loss(&inputs, weights, &all_frames)
}
