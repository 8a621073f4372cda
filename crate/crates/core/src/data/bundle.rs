//! Embedding bundles: class-text features, support sets, test instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ClassCatalog, DataError, PromptSet};
use crate::numerics::{l2_norm, DenseMatrix, FeatureBlock};
use crate::scalar::Scalar;

/// Origin of one support video: which class, which sampled prompt, which
/// repeat, and whether the synthetic generator displaced it off-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub class: usize,
    pub prompt: usize,
    pub repeat: usize,
    pub outlier: bool,
}

/// (M, m, n) bookkeeping carried by a support set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCounts {
    /// M: candidate descriptions per class.
    pub available: usize,
    /// m: sampled prompts per class.
    pub sampled: usize,
    /// n: videos per sampled prompt.
    pub repeats: usize,
}

impl PromptCounts {
    pub fn per_class(&self) -> usize {
        self.sampled * self.repeats
    }
}

/// C x d class-name embedding matrix W, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTextFeatures<S: Scalar> {
    matrix: DenseMatrix<S>,
    normalized: bool,
}

impl<S: Scalar> ClassTextFeatures<S> {
    pub fn new(matrix: DenseMatrix<S>, normalized: bool) -> Result<Self, DataError> {
        if normalized {
            for (i, row) in matrix.iter_rows().enumerate() {
                let norm = l2_norm(row);
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(DataError::InvariantViolation(format!(
                        "class-text row {i} marked normalized but has norm {norm}"
                    )));
                }
            }
        }
        Ok(Self { matrix, normalized })
    }

    pub fn classes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self) -> &DenseMatrix<S> {
        &self.matrix
    }

    pub fn class_row(&self, class: usize) -> &[S] {
        self.matrix.row(class)
    }

    pub fn cast<T: Scalar>(&self) -> ClassTextFeatures<T> {
        ClassTextFeatures {
            matrix: self.matrix.cast(),
            normalized: self.normalized,
        }
    }
}

/// Support set: CK x T x d features, CK x C one-hot labels, and per-video
/// provenance. Row order is normative: class-major, then prompt, then
/// repeat (`row = class * K + prompt * n + repeat`), which keeps video
/// weight indices auditable against provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSetBundle<S: Scalar> {
    pub features: FeatureBlock<S>,
    pub labels: DenseMatrix<S>,
    pub provenance: Vec<Provenance>,
    pub prompt_counts: PromptCounts,
}

impl<S: Scalar> SupportSetBundle<S> {
    pub fn classes(&self) -> usize {
        self.labels.cols()
    }

    /// K: support videos per class.
    pub fn per_class(&self) -> usize {
        self.prompt_counts.per_class()
    }

    pub fn videos(&self) -> usize {
        self.features.videos()
    }

    pub fn frames(&self) -> usize {
        self.features.frames()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Class of support video `row` (from the one-hot labels).
    pub fn class_of(&self, row: usize) -> usize {
        crate::numerics::argmax(self.labels.row(row))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let ck = self.features.videos();
        let c = self.labels.cols();
        let k = self.prompt_counts.per_class();
        if self.labels.rows() != ck {
            return Err(DataError::InvariantViolation(format!(
                "label rows {} != video count {ck}",
                self.labels.rows()
            )));
        }
        if self.provenance.len() != ck {
            return Err(DataError::InvariantViolation(format!(
                "provenance length {} != video count {ck}",
                self.provenance.len()
            )));
        }
        if c * k != ck {
            return Err(DataError::InvariantViolation(format!(
                "{ck} videos cannot split into {c} classes of K={k}"
            )));
        }
        let mut per_class = vec![0usize; c];
        for (row, lr) in self.labels.iter_rows().enumerate() {
            let ones = lr.iter().filter(|&&x| x == S::one()).count();
            let zeros = lr.iter().filter(|&&x| x == S::zero()).count();
            if ones != 1 || ones + zeros != c {
                return Err(DataError::InvariantViolation(format!(
                    "label row {row} is not one-hot"
                )));
            }
            per_class[crate::numerics::argmax(lr)] += 1;
        }
        if let Some(class) = per_class.iter().position(|&n| n != k) {
            return Err(DataError::FactorabilityViolation {
                class,
                provided: per_class[class],
                expected: k,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for (row, p) in self.provenance.iter().enumerate() {
            if !seen.insert((p.class, p.prompt, p.repeat)) {
                return Err(DataError::InvariantViolation(format!(
                    "duplicate provenance triple at row {row}"
                )));
            }
            if self.class_of(row) != p.class {
                return Err(DataError::InvariantViolation(format!(
                    "label/provenance class disagreement at row {row}"
                )));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> SupportSetBundle<T> {
        SupportSetBundle {
            features: self.features.cast(),
            labels: self.labels.cast(),
            provenance: self.provenance.clone(),
            prompt_counts: self.prompt_counts,
        }
    }
}

/// One test video: V augmented views plus the un-augmented original.
#[derive(Debug, Clone, PartialEq)]
pub struct TestInstanceBundle<S: Scalar> {
    pub views: FeatureBlock<S>,
    pub original: DenseMatrix<S>,
    pub ground_truth: Option<usize>,
}

impl<S: Scalar> TestInstanceBundle<S> {
    pub fn view_count(&self) -> usize {
        self.views.videos()
    }

    pub fn frames(&self) -> usize {
        self.views.frames()
    }

    pub fn dim(&self) -> usize {
        self.views.dim()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.views.videos() == 0 {
            return Err(DataError::InvariantViolation(
                "test instance needs at least one view".into(),
            ));
        }
        if self.original.rows() != self.views.frames() || self.original.cols() != self.views.dim()
        {
            return Err(DataError::DimMismatch(format!(
                "original is {}x{} but views are {}x{}",
                self.original.rows(),
                self.original.cols(),
                self.views.frames(),
                self.views.dim()
            )));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> TestInstanceBundle<T> {
        TestInstanceBundle {
            views: self.views.cast(),
            original: self.original.cast(),
            ground_truth: self.ground_truth,
        }
    }
}

/// Stack per-video feature matrices into a support set, validating the
/// K = m * n bookkeeping. `videos` maps (class, prompt, repeat) to a
/// T x d matrix.
pub fn compose_support_set<S: Scalar>(
    catalog: &ClassCatalog,
    prompts: &PromptSet,
    videos: &BTreeMap<(usize, usize, usize), DenseMatrix<S>>,
) -> Result<SupportSetBundle<S>, DataError> {
    let c = catalog.len();
    let m = prompts.sampled();
    let n = prompts.repeats();
    let k = m * n;

    let mut per_class = vec![0usize; c];
    for &(class, _, _) in videos.keys() {
        if class >= c {
            return Err(DataError::InvariantViolation(format!(
                "video references class {class} outside catalog of {c}"
            )));
        }
        per_class[class] += 1;
    }
    if let Some(class) = per_class.iter().position(|&count| count != k) {
        return Err(DataError::FactorabilityViolation {
            class,
            provided: per_class[class],
            expected: k,
        });
    }

    let first = videos.values().next().ok_or_else(|| {
        DataError::InvariantViolation("no videos supplied for composition".into())
    })?;
    let (frames, dim) = (first.rows(), first.cols());

    let mut stacked = Vec::with_capacity(c * k);
    let mut labels = DenseMatrix::zeros(c * k, c);
    let mut provenance = Vec::with_capacity(c * k);
    for class in 0..c {
        for prompt in 0..m {
            for repeat in 0..n {
                let mat = videos.get(&(class, prompt, repeat)).ok_or(
                    DataError::MissingVideo {
                        class,
                        prompt,
                        repeat,
                    },
                )?;
                if mat.rows() != frames || mat.cols() != dim {
                    return Err(DataError::DimMismatch(format!(
                        "video ({class},{prompt},{repeat}) is {}x{}, expected {frames}x{dim}",
                        mat.rows(),
                        mat.cols()
                    )));
                }
                let row = class * k + prompt * n + repeat;
                labels.row_mut(row)[class] = S::one();
                stacked.push(mat.clone());
                provenance.push(Provenance {
                    class,
                    prompt,
                    repeat,
                    outlier: false,
                });
            }
        }
    }

    let bundle = SupportSetBundle {
        features: FeatureBlock::from_videos(&stacked)?,
        labels,
        provenance,
        prompt_counts: PromptCounts {
            available: prompts.available(),
            sampled: m,
            repeats: n,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}
