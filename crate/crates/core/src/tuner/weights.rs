//! Factorized support-set weights: one scalar per support video, one per
//! frame position (shared across videos).

use crate::numerics::FeatureBlock;
use crate::scalar::{narrow, wide, Scalar};
use crate::tuner::TunerError;

/// Learnable weights; fresh weights are exactly 1 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedWeights<S: Scalar> {
    /// Per-support-video scale, length CK.
    pub video: Vec<S>,
    /// Per-frame scale, length T.
    pub frame: Vec<S>,
}

impl<S: Scalar> FactorizedWeights<S> {
    pub fn ones(videos: usize, frames: usize) -> Self {
        Self {
            video: vec![S::one(); videos],
            frame: vec![S::one(); frames],
        }
    }

    pub fn from_f64(video: &[f64], frame: &[f64]) -> Self {
        Self {
            video: video.iter().map(|&x| narrow(x)).collect(),
            frame: frame.iter().map(|&x| narrow(x)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        if self
            .video
            .iter()
            .chain(&self.frame)
            .any(|x| !x.is_finite())
        {
            return Err(TunerError::ShapeMismatch(
                "weights contain non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

/// `F'[j,t,:] = F[j,t,:] * video[j] * frame[t]`.
pub fn apply_weights<S: Scalar>(
    features: &FeatureBlock<S>,
    weights: &FactorizedWeights<S>,
) -> Result<FeatureBlock<S>, TunerError> {
    if weights.video.len() != features.videos() || weights.frame.len() != features.frames() {
        return Err(TunerError::ShapeMismatch(format!(
            "weights ({}, {}) do not match features ({}, {})",
            weights.video.len(),
            weights.frame.len(),
            features.videos(),
            features.frames()
        )));
    }
    weights.validate()?;
    let mut out = features.clone();
    for video in 0..features.videos() {
        let rv = wide(weights.video[video]);
        for frame in 0..features.frames() {
            let scale = rv * wide(weights.frame[frame]);
            for x in out.frame_mut(video, frame) {
                *x = narrow(wide(*x) * scale);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> FeatureBlock<f64> {
        FeatureBlock::from_vec(2, 2, 2, (1..=8).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn all_ones_is_identity() {
        let f = block();
        let w = FactorizedWeights::ones(2, 2);
        assert_eq!(apply_weights(&f, &w).unwrap(), f);
    }

    #[test]
    fn reciprocal_factors_cancel() {
        let f = FeatureBlock::from_vec(1, 1, 2, vec![2.0, 4.0]).unwrap();
        let w = FactorizedWeights {
            video: vec![0.5],
            frame: vec![2.0],
        };
        assert_eq!(apply_weights(&f, &w).unwrap().frame(0, 0), &[2.0, 4.0]);
    }

    #[test]
    fn zero_video_weight_annihilates_video() {
        let f = block();
        let w = FactorizedWeights {
            video: vec![0.0, 1.0],
            frame: vec![1.0, 1.0],
        };
        let out = apply_weights(&f, &w).unwrap();
        assert_eq!(out.frame(0, 0), &[0.0, 0.0]);
        assert_eq!(out.frame(0, 1), &[0.0, 0.0]);
        assert_eq!(out.frame(1, 0), f.frame(1, 0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = block();
        let w = FactorizedWeights::ones(3, 2);
        assert!(matches!(
            apply_weights(&f, &w),
            Err(TunerError::ShapeMismatch(_))
        ));
    }
}
