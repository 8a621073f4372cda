//! Per-class dispersion statistics over a support set.
//!
//! Videos are pooled by mean over frames, then renormalized; distances are
//! cosine distances (1 - dot), so every statistic lies in [0, 2] and is
//! invariant under positive rescaling of the features.

use serde::Serialize;

use crate::data::{DataError, SupportSetBundle};
use crate::numerics::{dot, l2_normalize};
use crate::scalar::{wide, Scalar};

/// Pairwise cosine-distance means for one class; `within_prompt` /
/// `across_prompt` are absent when the class has no such pairs.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClassDispersion {
    pub class: usize,
    pub mean_pairwise: f64,
    pub within_prompt: Option<f64>,
    pub across_prompt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DispersionReport {
    /// One entry per class; `None` marks a degenerate class (K = 1, no pairs).
    pub per_class: Vec<Option<ClassDispersion>>,
}

impl DispersionReport {
    /// Mean over classes of the per-class mean pairwise distance.
    pub fn mean_intra_class(&self) -> Option<f64> {
        let values: Vec<f64> = self
            .per_class
            .iter()
            .flatten()
            .map(|c| c.mean_pairwise)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

fn pooled_unit_videos<S: Scalar>(bundle: &SupportSetBundle<S>) -> Result<Vec<Vec<f64>>, DataError> {
    let t = bundle.frames();
    let d = bundle.dim();
    let mut pooled = Vec::with_capacity(bundle.videos());
    for video in 0..bundle.videos() {
        let mut mean = vec![0.0f64; d];
        for frame in 0..t {
            for (acc, &x) in mean.iter_mut().zip(bundle.features.frame(video, frame)) {
                *acc += wide(x);
            }
        }
        for x in &mut mean {
            *x /= t as f64;
        }
        let unit = l2_normalize(&mean).map_err(|_| {
            DataError::InvariantViolation(format!("support video {video} pools to a zero vector"))
        })?;
        pooled.push(unit);
    }
    Ok(pooled)
}

/// Compute per-class dispersion statistics.
pub fn dispersion_stats<S: Scalar>(
    bundle: &SupportSetBundle<S>,
) -> Result<DispersionReport, DataError> {
    bundle.validate()?;
    let pooled = pooled_unit_videos(bundle)?;
    let c = bundle.classes();
    let k = bundle.per_class();
    let mut per_class = Vec::with_capacity(c);
    for class in 0..c {
        if k < 2 {
            per_class.push(None);
            continue;
        }
        let rows: Vec<usize> = (class * k..(class + 1) * k).collect();
        let mut all = MeanAcc::default();
        let mut within = MeanAcc::default();
        let mut across = MeanAcc::default();
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                let dist = 1.0 - dot(&pooled[i], &pooled[j]);
                all.push(dist);
                if bundle.provenance[i].prompt == bundle.provenance[j].prompt {
                    within.push(dist);
                } else {
                    across.push(dist);
                }
            }
        }
        per_class.push(Some(ClassDispersion {
            class,
            mean_pairwise: all.mean().unwrap_or(0.0),
            within_prompt: within.mean(),
            across_prompt: across.mean(),
        }));
    }
    Ok(DispersionReport { per_class })
}

#[derive(Default)]
struct MeanAcc {
    sum: f64,
    count: usize,
}

impl MeanAcc {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SyntheticConfig};
    use crate::data::{PromptCounts, Provenance};
    use crate::numerics::{DenseMatrix, FeatureBlock};

    fn bundle_from_rows(
        rows: Vec<Vec<f32>>,
        classes: usize,
        sampled: usize,
        repeats: usize,
    ) -> SupportSetBundle<f32> {
        let k = sampled * repeats;
        let d = rows[0].len();
        let mut labels = DenseMatrix::zeros(rows.len(), classes);
        let mut provenance = Vec::new();
        for (row, _) in rows.iter().enumerate() {
            let class = row / k;
            labels.row_mut(row)[class] = 1.0;
            provenance.push(Provenance {
                class,
                prompt: (row % k) / repeats,
                repeat: row % repeats,
                outlier: false,
            });
        }
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        SupportSetBundle {
            features: FeatureBlock::from_vec(classes * k, 1, d, flat).unwrap(),
            labels,
            provenance,
            prompt_counts: PromptCounts {
                available: sampled,
                sampled,
                repeats,
            },
        }
    }

    #[test]
    fn identical_videos_have_zero_dispersion() {
        let bundle = bundle_from_rows(vec![vec![1.0, 0.0]; 4], 1, 2, 2);
        let report = dispersion_stats(&bundle).unwrap();
        let class = report.per_class[0].as_ref().unwrap();
        assert_eq!(class.mean_pairwise, 0.0);
        assert_eq!(class.within_prompt, Some(0.0));
        assert_eq!(class.across_prompt, Some(0.0));
    }

    #[test]
    fn orthogonal_pair_has_distance_one() {
        let bundle = bundle_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1, 2, 1);
        let report = dispersion_stats(&bundle).unwrap();
        let class = report.per_class[0].as_ref().unwrap();
        assert!((class.mean_pairwise - 1.0).abs() < 1e-12);
        // n = 1: every pair crosses prompts.
        assert_eq!(class.within_prompt, None);
        assert_eq!(class.across_prompt, Some(1.0));
    }

    #[test]
    fn single_video_class_reports_null() {
        let bundle = bundle_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2, 1, 1);
        let report = dispersion_stats(&bundle).unwrap();
        assert!(report.per_class.iter().all(Option::is_none));
    }

    #[test]
    fn multi_prompt_spreads_across_prompts() {
        let config = SyntheticConfig {
            prompts_per_class: 5,
            repeats_per_prompt: 2,
            inter_prompt_spread: 0.3,
            intra_prompt_noise: 0.05,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let data = synth_generate(&config).unwrap();
        let report = dispersion_stats(&data.support).unwrap();
        for class in report.per_class.iter().flatten() {
            let within = class.within_prompt.unwrap();
            let across = class.across_prompt.unwrap();
            assert!(
                across > within,
                "class {}: across {across} <= within {within}",
                class.class
            );
        }
    }

    #[test]
    fn rescaling_features_leaves_stats_unchanged() {
        let config = SyntheticConfig {
            seed: 11,
            ..SyntheticConfig::default()
        };
        let data = synth_generate(&config).unwrap();
        let base = dispersion_stats(&data.support).unwrap();
        let mut scaled = data.support.clone();
        let scaled_data: Vec<f32> = scaled.features.data().iter().map(|&x| x * 3.5).collect();
        scaled.features = FeatureBlock::from_vec(
            scaled.features.videos(),
            scaled.features.frames(),
            scaled.features.dim(),
            scaled_data,
        )
        .unwrap();
        let rescaled = dispersion_stats(&scaled).unwrap();
        for (a, b) in base.per_class.iter().zip(&rescaled.per_class) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            // f32 storage rounds the scaled entries, so exactness is at ulp level.
            assert!((a.mean_pairwise - b.mean_pairwise).abs() < 1e-6);
        }
    }
}
