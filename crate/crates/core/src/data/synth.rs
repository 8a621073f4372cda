//! Seeded synthetic embedding generator.
//!
//! One ChaCha12 stream per call, advanced in a fixed order: class centers,
//! per-prompt sub-centers, support frames, outlier displacement, test
//! views. Normals come from the Marsaglia polar method (see `rng`), so a
//! seed pins every array bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::data::{
    ClassCatalog, ClassTextFeatures, DataError, PromptCounts, Provenance, SupportSetBundle,
    TestInstanceBundle,
};
use crate::numerics::{DenseMatrix, FeatureBlock};
use crate::rng::{self, Stream};

/// Shape and noise knobs for the generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// C: number of classes.
    pub classes: usize,
    /// m: prompts per class.
    pub prompts_per_class: usize,
    /// n: videos per prompt (K = m * n).
    pub repeats_per_prompt: usize,
    /// T: frames per video.
    pub frames: usize,
    /// d: embedding dimension.
    pub dim: usize,
    /// V: augmented views per test instance.
    pub views: usize,
    /// Number of test instances; ground truth cycles through the classes.
    pub test_instances: usize,
    /// Frame-level jitter around each prompt sub-center.
    pub intra_prompt_noise: f64,
    /// Offset of prompt sub-centers from their class center.
    pub inter_prompt_spread: f64,
    /// Jitter applied to the test original and each augmented view.
    pub view_noise: f64,
    /// Fraction of each class's support videos displaced off-class.
    pub outlier_fraction: f64,
    /// Interpolation weight toward the wrong class center (1 = lands on it).
    pub outlier_distance: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            prompts_per_class: 2,
            repeats_per_prompt: 2,
            frames: 8,
            dim: 16,
            views: 8,
            test_instances: 10,
            intra_prompt_noise: 0.05,
            inter_prompt_spread: 0.3,
            view_noise: 0.2,
            outlier_fraction: 0.0,
            outlier_distance: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let counts = [
            ("classes", self.classes),
            ("prompts_per_class", self.prompts_per_class),
            ("repeats_per_prompt", self.repeats_per_prompt),
            ("frames", self.frames),
            ("dim", self.dim),
            ("views", self.views),
            ("test_instances", self.test_instances),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(DataError::InvariantViolation(format!(
                    "synthetic config: {name} must be at least 1"
                )));
            }
        }
        for (name, value) in [
            ("intra_prompt_noise", self.intra_prompt_noise),
            ("inter_prompt_spread", self.inter_prompt_spread),
            ("view_noise", self.view_noise),
        ] {
            if !(value >= 0.0) {
                return Err(DataError::InvariantViolation(format!(
                    "synthetic config: {name} must be nonnegative"
                )));
            }
        }
        for (name, value) in [
            ("outlier_fraction", self.outlier_fraction),
            ("outlier_distance", self.outlier_distance),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DataError::InvariantViolation(format!(
                    "synthetic config: {name} must lie in [0, 1]"
                )));
            }
        }
        if self.classes < 2 && self.outlier_fraction > 0.0 {
            return Err(DataError::InvariantViolation(
                "outliers need at least 2 classes".into(),
            ));
        }
        Ok(())
    }
}

/// Everything one experiment needs, generated from a seed.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub catalog: ClassCatalog,
    pub class_text: ClassTextFeatures<f32>,
    pub support: SupportSetBundle<f32>,
    pub tests: Vec<TestInstanceBundle<f32>>,
}

fn gaussian_vec(rng: &mut Stream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng::standard_normal(rng)).collect()
}

fn unit_gaussian(rng: &mut Stream, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        if let Ok(u) = crate::numerics::l2_normalize(&v) {
            return u;
        }
    }
}

fn perturbed_unit(rng: &mut Stream, base: &[f64], sigma: f64) -> Vec<f64> {
    loop {
        let noise = gaussian_vec(rng, base.len());
        let v: Vec<f64> = base
            .iter()
            .zip(&noise)
            .map(|(&b, &g)| b + sigma * g)
            .collect();
        if let Ok(u) = crate::numerics::l2_normalize(&v) {
            return u;
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Generate a dataset. Deterministic in `config` including the seed.
pub fn synth_generate(config: &SyntheticConfig) -> Result<SyntheticDataset, DataError> {
    config.validate()?;
    let c = config.classes;
    let m = config.prompts_per_class;
    let n = config.repeats_per_prompt;
    let k = m * n;
    let t = config.frames;
    let d = config.dim;
    let mut stream = rng::stream_from_seed(config.seed);

    // Phase 1: class centers, approximately uniform on the unit sphere.
    let centers: Vec<Vec<f64>> = (0..c).map(|_| unit_gaussian(&mut stream, d)).collect();

    // Phase 2: per-prompt sub-centers.
    let mut sub_centers = Vec::with_capacity(c);
    for center in &centers {
        let subs: Vec<Vec<f64>> = (0..m)
            .map(|_| perturbed_unit(&mut stream, center, config.inter_prompt_spread))
            .collect();
        sub_centers.push(subs);
    }

    // Phase 3: support frames around each sub-center.
    let mut frames = vec![0.0f32; c * k * t * d];
    let mut provenance = Vec::with_capacity(c * k);
    let mut labels = DenseMatrix::<f32>::zeros(c * k, c);
    for class in 0..c {
        for prompt in 0..m {
            for repeat in 0..n {
                let row = class * k + prompt * n + repeat;
                for frame in 0..t {
                    let v = perturbed_unit(
                        &mut stream,
                        &sub_centers[class][prompt],
                        config.intra_prompt_noise,
                    );
                    let start = (row * t + frame) * d;
                    frames[start..start + d].copy_from_slice(&to_f32(&v));
                }
                labels.row_mut(row)[class] = 1.0;
                provenance.push(Provenance {
                    class,
                    prompt,
                    repeat,
                    outlier: false,
                });
            }
        }
    }

    // Phase 4: displace a rounded fraction of each class's videos toward a
    // random other class center and flag them.
    let outliers_per_class = ((config.outlier_fraction * k as f64).round() as usize).min(k);
    if outliers_per_class > 0 {
        for class in 0..c {
            let picked = rng::sample_indices(&mut stream, k, outliers_per_class);
            for local in picked {
                let row = class * k + local;
                let mut target = rng::below(&mut stream, (c - 1) as u64) as usize;
                if target >= class {
                    target += 1;
                }
                for frame in 0..t {
                    let start = (row * t + frame) * d;
                    let current: Vec<f64> =
                        frames[start..start + d].iter().map(|&x| x as f64).collect();
                    let moved: Vec<f64> = current
                        .iter()
                        .zip(&centers[target])
                        .map(|(&x, &goal)| x + config.outlier_distance * (goal - x))
                        .collect();
                    let unit = crate::numerics::l2_normalize(&moved)
                        .map_err(|e| DataError::ShapeMismatch(e.to_string()))?;
                    frames[start..start + d].copy_from_slice(&to_f32(&unit));
                }
                provenance[row].outlier = true;
            }
        }
    }

    // Phase 5: test instances; ground truth cycles through the classes.
    let mut tests = Vec::with_capacity(config.test_instances);
    for instance in 0..config.test_instances {
        let gt = instance % c;
        let mut original = vec![0.0f32; t * d];
        let mut base_frames = Vec::with_capacity(t);
        for frame in 0..t {
            let v = perturbed_unit(&mut stream, &centers[gt], config.view_noise);
            original[frame * d..(frame + 1) * d].copy_from_slice(&to_f32(&v));
            base_frames.push(v);
        }
        let mut views = vec![0.0f32; config.views * t * d];
        for view in 0..config.views {
            for frame in 0..t {
                let v = perturbed_unit(&mut stream, &base_frames[frame], config.view_noise);
                let start = (view * t + frame) * d;
                views[start..start + d].copy_from_slice(&to_f32(&v));
            }
        }
        tests.push(TestInstanceBundle {
            views: FeatureBlock::from_vec(config.views, t, d, views)
                .map_err(|e| DataError::ShapeMismatch(e.to_string()))?,
            original: DenseMatrix::from_vec(t, d, original)
                .map_err(|e| DataError::ShapeMismatch(e.to_string()))?,
            ground_truth: Some(gt),
        });
    }

    let catalog = ClassCatalog::new((0..c).map(|i| format!("class_{i:03}")).collect())?;
    let w_rows: Vec<Vec<f32>> = centers.iter().map(|v| to_f32(v)).collect();
    let class_text = ClassTextFeatures::new(
        DenseMatrix::from_rows(&w_rows).map_err(|e| DataError::ShapeMismatch(e.to_string()))?,
        true,
    )?;
    let support = SupportSetBundle {
        features: FeatureBlock::from_vec(c * k, t, d, frames)
            .map_err(|e| DataError::ShapeMismatch(e.to_string()))?,
        labels,
        provenance,
        prompt_counts: PromptCounts {
            available: m,
            sampled: m,
            repeats: n,
        },
    };
    support.validate()?;
    Ok(SyntheticDataset {
        catalog,
        class_text,
        support,
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, l2_normalize};

    #[test]
    fn same_seed_is_bit_identical() {
        let config = SyntheticConfig {
            outlier_fraction: 0.25,
            outlier_distance: 0.5,
            seed: 9,
            ..SyntheticConfig::default()
        };
        let a = synth_generate(&config).unwrap();
        let b = synth_generate(&config).unwrap();
        assert_eq!(a.support.features.data(), b.support.features.data());
        assert_eq!(a.class_text.matrix().data(), b.class_text.matrix().data());
        assert_eq!(a.tests[0].views.data(), b.tests[0].views.data());
        assert_eq!(
            a.support.provenance, b.support.provenance,
        );
    }

    #[test]
    fn clean_videos_stay_closest_to_own_center() {
        // With no outliers and tight noise, every video's mean frame is
        // strictly closest (in cosine) to its own class center.
        let config = SyntheticConfig {
            classes: 6,
            prompts_per_class: 3,
            repeats_per_prompt: 2,
            intra_prompt_noise: 0.1,
            inter_prompt_spread: 0.1,
            outlier_fraction: 0.0,
            seed: 42,
            ..SyntheticConfig::default()
        };
        let data = synth_generate(&config).unwrap();
        let d = config.dim;
        for row in 0..data.support.videos() {
            let mut mean = vec![0.0f64; d];
            for t in 0..config.frames {
                for (acc, &x) in mean.iter_mut().zip(data.support.features.frame(row, t)) {
                    *acc += x as f64;
                }
            }
            let mean = l2_normalize(&mean).unwrap();
            let own = data.support.provenance[row].class;
            let sims: Vec<f64> = (0..config.classes)
                .map(|class| {
                    let w: Vec<f64> = data
                        .class_text
                        .class_row(class)
                        .iter()
                        .map(|&x| x as f64)
                        .collect();
                    dot(&mean, &w)
                })
                .collect();
            for (class, &sim) in sims.iter().enumerate() {
                if class != own {
                    assert!(
                        sims[own] > sim,
                        "video {row} of class {own} closer to {class}"
                    );
                }
            }
        }
    }

    #[test]
    fn outlier_flags_match_requested_fraction() {
        let config = SyntheticConfig {
            outlier_fraction: 0.25,
            outlier_distance: 0.8,
            seed: 3,
            ..SyntheticConfig::default()
        };
        let data = synth_generate(&config).unwrap();
        let k = config.prompts_per_class * config.repeats_per_prompt;
        for class in 0..config.classes {
            let flagged = data.support.provenance[class * k..(class + 1) * k]
                .iter()
                .filter(|p| p.outlier)
                .count();
            assert_eq!(flagged, 1); // round(0.25 * 4)
        }
    }

    #[test]
    fn zero_view_noise_pins_tests_to_centers() {
        let config = SyntheticConfig {
            view_noise: 0.0,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let data = synth_generate(&config).unwrap();
        let first = &data.tests[0];
        let center = data.class_text.class_row(0);
        assert_eq!(first.ground_truth, Some(0));
        // Re-normalization of an already-unit vector only drifts by ulps.
        for t in 0..config.frames {
            for (a, b) in first.original.row(t).iter().zip(center) {
                assert!((a - b).abs() < 1e-6);
            }
            for (a, b) in first.views.frame(0, t).iter().zip(center) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut config = SyntheticConfig::default();
        config.classes = 0;
        assert!(config.validate().is_err());
        let mut config = SyntheticConfig::default();
        config.outlier_fraction = 1.5;
        assert!(config.validate().is_err());
        let mut config = SyntheticConfig::default();
        config.view_noise = -0.1;
        assert!(config.validate().is_err());
    }
}
