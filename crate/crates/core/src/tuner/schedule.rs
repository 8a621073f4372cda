//! Multi-scale tuning schedules and frame selection.

use serde::{Deserialize, Serialize};

use crate::numerics::topk_indices;
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tuner::TunerError;

/// One stage: optimize `steps` times at temporal scale `scale` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub scale: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Frames with the largest frame-level weights.
    Top,
    /// Seeded draw without replacement.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSchedule {
    pub stages: Vec<Stage>,
    pub strategy: SamplingStrategy,
    /// Seeds the per-session stream (random strategy only).
    pub rng_seed: u64,
}

impl Default for TuningSchedule {
    fn default() -> Self {
        // 10 steps: 4 at scale 8, 3 at scale 6, 3 at scale 4.
        Self {
            stages: vec![
                Stage { scale: 8, steps: 4 },
                Stage { scale: 6, steps: 3 },
                Stage { scale: 4, steps: 3 },
            ],
            strategy: SamplingStrategy::Top,
            rng_seed: 0,
        }
    }
}

impl TuningSchedule {
    pub fn validate(&self, frames: usize) -> Result<(), TunerError> {
        if self.stages.is_empty() {
            return Err(TunerError::InvalidConfig(
                "schedule needs at least one stage".into(),
            ));
        }
        for stage in &self.stages {
            if stage.scale == 0 || stage.scale > frames {
                return Err(TunerError::InvalidConfig(format!(
                    "stage scale {} out of range for {frames} frames",
                    stage.scale
                )));
            }
            if stage.steps == 0 {
                return Err(TunerError::InvalidConfig(
                    "stage step count must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Parse `"8x4,6x3,4x3"` into stages.
    pub fn parse_stages(text: &str) -> Result<Vec<Stage>, TunerError> {
        let mut stages = Vec::new();
        for part in text.split(',') {
            let (scale, steps) = part.trim().split_once('x').ok_or_else(|| {
                TunerError::InvalidConfig(format!("bad stage '{part}', expected SCALExSTEPS"))
            })?;
            stages.push(Stage {
                scale: scale.trim().parse().map_err(|_| {
                    TunerError::InvalidConfig(format!("bad scale in stage '{part}'"))
                })?,
                steps: steps.trim().parse().map_err(|_| {
                    TunerError::InvalidConfig(format!("bad step count in stage '{part}'"))
                })?,
            });
        }
        if stages.is_empty() {
            return Err(TunerError::InvalidConfig("empty schedule".into()));
        }
        Ok(stages)
    }

    /// Stages repeated `epochs` times back to back.
    pub fn repeated(&self, epochs: usize) -> TuningSchedule {
        let mut out = self.clone();
        out.stages = std::iter::repeat(self.stages.clone())
            .take(epochs.max(1))
            .flatten()
            .collect();
        out
    }
}

/// Choose the frame index set for one step. `k == T` returns all frames
/// without touching the stream, whatever the strategy.
pub fn select_frames<S: Scalar>(
    frame_weights: &[S],
    k: usize,
    strategy: SamplingStrategy,
    rng: &mut Stream,
) -> Result<Vec<usize>, TunerError> {
    let t = frame_weights.len();
    if k == 0 || k > t {
        return Err(TunerError::Numerics(
            crate::numerics::NumericsError::KOutOfRange { k, len: t },
        ));
    }
    if k == t {
        return Ok((0..t).collect());
    }
    match strategy {
        SamplingStrategy::Top => Ok(topk_indices(frame_weights, k)?),
        SamplingStrategy::Random => Ok(rng::sample_indices(rng, t, k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_is_ten_steps() {
        let schedule = TuningSchedule::default();
        assert_eq!(schedule.total_steps(), 10);
        let scales: Vec<usize> = schedule
            .stages
            .iter()
            .flat_map(|s| std::iter::repeat(s.scale).take(s.steps))
            .collect();
        assert_eq!(scales, [8, 8, 8, 8, 6, 6, 6, 4, 4, 4]);
    }

    #[test]
    fn parse_round_trips_default() {
        let stages = TuningSchedule::parse_stages("8x4,6x3,4x3").unwrap();
        assert_eq!(stages, TuningSchedule::default().stages);
        assert!(TuningSchedule::parse_stages("8x").is_err());
        assert!(TuningSchedule::parse_stages("ax2").is_err());
    }

    #[test]
    fn top_strategy_uses_weight_order() {
        let mut rng = rng::stream_from_seed(0);
        let picked =
            select_frames(&[0.1f64, 0.9, 0.5, 0.7], 2, SamplingStrategy::Top, &mut rng).unwrap();
        assert_eq!(picked, [1, 3]);
    }

    #[test]
    fn full_scale_returns_all_frames_without_rng() {
        let mut a = rng::stream_from_seed(5);
        let mut b = rng::stream_from_seed(5);
        let picked =
            select_frames(&[0.0f64; 8], 8, SamplingStrategy::Random, &mut a).unwrap();
        assert_eq!(picked, (0..8).collect::<Vec<_>>());
        // The stream was not consumed.
        assert_eq!(rng::uniform_f64(&mut a), rng::uniform_f64(&mut b));
    }

    #[test]
    fn random_strategy_is_reproducible() {
        let mut a = rng::stream_from_seed(9);
        let mut b = rng::stream_from_seed(9);
        for _ in 0..5 {
            let x = select_frames(&[0.0f64; 8], 3, SamplingStrategy::Random, &mut a).unwrap();
            let y = select_frames(&[0.0f64; 8], 3, SamplingStrategy::Random, &mut b).unwrap();
            assert_eq!(x, y);
            assert!(x.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn out_of_range_scale_rejected() {
        let mut rng = rng::stream_from_seed(0);
        assert!(select_frames(&[0.0f64; 4], 5, SamplingStrategy::Top, &mut rng).is_err());
        assert!(select_frames(&[0.0f64; 4], 0, SamplingStrategy::Top, &mut rng).is_err());
    }

    #[test]
    fn repeated_schedule_concatenates_stages() {
        let schedule = TuningSchedule::default().repeated(2);
        assert_eq!(schedule.total_steps(), 20);
        assert_eq!(schedule.stages.len(), 6);
    }
}
