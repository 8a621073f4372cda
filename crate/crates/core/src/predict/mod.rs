//! Inference paths: plain text-similarity logits, exponential cache
//! affinities, KL-bridge affinities, blending, and multi-view prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ClassTextFeatures;
use crate::numerics::{
    dot, l2_normalize, log_softmax_scaled, softmax, DenseMatrix, Distribution, FeatureBlock,
    NumericsError,
};
use crate::scalar::{narrow, wide, Scalar};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("empty frame selection")]
    EmptySelection,
    #[error("frame index {index} out of range for {len} frames")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid predictor config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How the negated-KL affinity vector is mapped onto nonnegative weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMode {
    /// Linear map sending min to 0 and max to 1; a constant vector maps to 0.5.
    AffineRescale,
    /// `exp(psi_scale * affinity)`.
    Exponential,
}

/// Per-path blend weights for the final logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights<S: Scalar> {
    /// Weight on the text-similarity path.
    pub zs: S,
    /// Weight on the exponential cache path.
    pub ta: S,
    /// Weight on the KL-affinity path.
    pub tx: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig<S: Scalar> {
    /// Sharpness of the exponential cache affinity.
    pub beta: S,
    /// Temperature for class distributions (KL inputs and the final softmax).
    pub class_softmax_temperature: S,
    pub blend: BlendWeights<S>,
    pub psi_mode: PsiMode,
    /// Only used in exponential mode.
    pub psi_scale: S,
}

impl<S: Scalar> Default for PredictorConfig<S> {
    fn default() -> Self {
        Self {
            beta: narrow(5.5),
            class_softmax_temperature: narrow(0.01),
            blend: BlendWeights {
                zs: S::one(),
                ta: S::zero(),
                tx: S::one(),
            },
            psi_mode: PsiMode::AffineRescale,
            psi_scale: S::one(),
        }
    }
}

impl<S: Scalar> PredictorConfig<S> {
    pub fn validate(&self) -> Result<(), PredictError> {
        if !(self.beta > S::zero()) {
            return Err(PredictError::InvalidConfig("beta must be positive".into()));
        }
        if !(self.class_softmax_temperature > S::zero()) {
            return Err(PredictError::Numerics(NumericsError::NonPositiveTemperature));
        }
        let b = &self.blend;
        if b.zs < S::zero() || b.ta < S::zero() || b.tx < S::zero() {
            return Err(PredictError::InvalidConfig(
                "blend weights must be nonnegative".into(),
            ));
        }
        if b.zs == S::zero() && b.ta == S::zero() && b.tx == S::zero() {
            return Err(PredictError::InvalidConfig(
                "at least one blend weight must be positive".into(),
            ));
        }
        if !(self.psi_scale > S::zero()) {
            return Err(PredictError::InvalidConfig(
                "psi_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> PredictorConfig<T> {
        PredictorConfig {
            beta: narrow(wide(self.beta)),
            class_softmax_temperature: narrow(wide(self.class_softmax_temperature)),
            blend: BlendWeights {
                zs: narrow(wide(self.blend.zs)),
                ta: narrow(wide(self.blend.ta)),
                tx: narrow(wide(self.blend.tx)),
            },
            psi_mode: self.psi_mode,
            psi_scale: narrow(wide(self.psi_scale)),
        }
    }
}

/// Length-C class score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<S: Scalar>(Vec<S>);

impl<S: Scalar> Logits<S> {
    pub fn new(values: Vec<S>) -> Result<Self, PredictError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(PredictError::Numerics(NumericsError::NonFinite));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.0
    }

    /// Predicted class: largest logit, smallest index on ties.
    pub fn argmax(&self) -> usize {
        crate::numerics::argmax(&self.0)
    }
}

/// Arithmetic mean of the selected frame rows. No renormalization: pooled
/// support features keep their learned scale.
pub fn pool_frames<S: Scalar>(
    features: &DenseMatrix<S>,
    indices: &[usize],
) -> Result<Vec<S>, PredictError> {
    if indices.is_empty() {
        return Err(PredictError::EmptySelection);
    }
    for &index in indices {
        if index >= features.rows() {
            return Err(PredictError::IndexOutOfRange {
                index,
                len: features.rows(),
            });
        }
    }
    let mut acc = vec![0.0f64; features.cols()];
    for &index in indices {
        for (a, &x) in acc.iter_mut().zip(features.row(index)) {
            *a += wide(x);
        }
    }
    let scale = indices.len() as f64;
    Ok(acc.iter().map(|&x| narrow(x / scale)).collect())
}

/// Pool one video of a feature block over `indices` (unchecked).
pub(crate) fn pool_block_video<S: Scalar>(
    block: &FeatureBlock<S>,
    video: usize,
    indices: &[usize],
) -> Vec<f64> {
    let mut acc = vec![0.0f64; block.dim()];
    for &t in indices {
        for (a, &x) in acc.iter_mut().zip(block.frame(video, t)) {
            *a += wide(x);
        }
    }
    let scale = indices.len() as f64;
    for a in &mut acc {
        *a /= scale;
    }
    acc
}

/// Cosine similarity of `f` against every class-text row.
pub fn zero_shot_logits<S: Scalar>(
    f: &[S],
    w: &ClassTextFeatures<S>,
) -> Result<Logits<S>, PredictError> {
    if f.len() != w.dim() {
        return Err(PredictError::DimMismatch(format!(
            "feature dim {} != class-text dim {}",
            f.len(),
            w.dim()
        )));
    }
    Logits::new(
        w.matrix()
            .iter_rows()
            .map(|row| narrow(dot(f, row)))
            .collect(),
    )
}

/// `exp(-beta * (1 - <f, F_j>))` per support video.
pub(crate) fn cache_affinities<S: Scalar>(f: &[S], pooled: &DenseMatrix<S>, beta: f64) -> Vec<f64> {
    pooled
        .iter_rows()
        .map(|row| (-beta * (1.0 - dot(f, row))).exp())
        .collect()
}

/// Sum a per-video weight vector into per-class logits through the one-hot
/// label matrix.
pub(crate) fn weights_through_labels<S: Scalar>(
    weights: &[f64],
    labels: &DenseMatrix<S>,
) -> Vec<f64> {
    let mut logits = vec![0.0f64; labels.cols()];
    for (j, &a) in weights.iter().enumerate() {
        for (c, &l) in labels.row(j).iter().enumerate() {
            logits[c] += a * wide(l);
        }
    }
    logits
}

/// Exponential cache-affinity logits attending over the one-hot labels.
pub fn tip_adapter_logits<S: Scalar>(
    f: &[S],
    pooled: &DenseMatrix<S>,
    labels: &DenseMatrix<S>,
    beta: S,
) -> Result<Logits<S>, PredictError> {
    if f.len() != pooled.cols() {
        return Err(PredictError::DimMismatch(format!(
            "feature dim {} != pooled support dim {}",
            f.len(),
            pooled.cols()
        )));
    }
    if labels.rows() != pooled.rows() {
        return Err(PredictError::DimMismatch(format!(
            "label rows {} != support rows {}",
            labels.rows(),
            pooled.rows()
        )));
    }
    let affinities = cache_affinities(f, pooled, wide(beta));
    Logits::new(
        weights_through_labels(&affinities, labels)
            .into_iter()
            .map(narrow)
            .collect(),
    )
}

/// Log-probabilities of each class distribution `softmax(F_j W^T / tau)`,
/// one row per support video. Computed in log space so far tails stay
/// exact instead of flooring at an epsilon.
pub(crate) fn support_class_log_probs<S: Scalar>(
    pooled: &DenseMatrix<S>,
    w: &ClassTextFeatures<S>,
    tau: f64,
) -> Vec<Vec<f64>> {
    pooled
        .iter_rows()
        .map(|row| {
            let scaled: Vec<f64> = w
                .matrix()
                .iter_rows()
                .map(|class_row| dot(row, class_row) / tau)
                .collect();
            log_softmax_scaled(&scaled)
        })
        .collect()
}

pub(crate) fn test_class_log_probs<S: Scalar>(
    f: &[S],
    w: &ClassTextFeatures<S>,
    tau: f64,
) -> Vec<f64> {
    let scaled: Vec<f64> = w
        .matrix()
        .iter_rows()
        .map(|class_row| dot(f, class_row) / tau)
        .collect();
    log_softmax_scaled(&scaled)
}

/// `-KL(p || q_j)` for each support video, from log-probabilities. Terms
/// with `p_c = 0` are skipped.
pub(crate) fn neg_kl_from_logs(test_log_p: &[f64], support_log_q: &[Vec<f64>]) -> Vec<f64> {
    let p: Vec<f64> = test_log_p.iter().map(|&lp| lp.exp()).collect();
    support_log_q
        .iter()
        .map(|log_q| {
            p.iter()
                .zip(test_log_p)
                .zip(log_q)
                .filter(|((&pc, _), _)| pc > 0.0)
                .map(|((&pc, &lp), &lq)| pc * (lq - lp))
                .sum()
        })
        .collect()
}

/// Negated KL divergence between the test feature's class distribution and
/// each support video's class distribution, text acting as the bridge.
pub fn kl_affinity_vector<S: Scalar>(
    f: &[S],
    pooled: &DenseMatrix<S>,
    w: &ClassTextFeatures<S>,
    temperature: S,
) -> Result<Vec<S>, PredictError> {
    if !(temperature > S::zero()) {
        return Err(PredictError::Numerics(NumericsError::NonPositiveTemperature));
    }
    if f.len() != w.dim() || pooled.cols() != w.dim() {
        return Err(PredictError::DimMismatch(format!(
            "dims disagree: f {}, support {}, class-text {}",
            f.len(),
            pooled.cols(),
            w.dim()
        )));
    }
    let tau = wide(temperature);
    let log_p = test_class_log_probs(f, w, tau);
    let log_q = support_class_log_probs(pooled, w, tau);
    Ok(neg_kl_from_logs(&log_p, &log_q)
        .into_iter()
        .map(narrow)
        .collect())
}

/// How the psi map was anchored; the gradient path re-uses the anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PsiSpan {
    /// Affine rescale anchored at these affinity indices.
    Rescale { min_idx: usize, max_idx: usize },
    /// Constant affinity vector: psi is 0.5 everywhere, gradient zero.
    Constant,
    Exponential,
}

/// Evaluate psi with a fixed anchoring (the gradient path freezes anchors
/// across perturbed re-evaluations).
pub(crate) fn psi_apply(affinities: &[f64], span: PsiSpan, scale: f64) -> Vec<f64> {
    match span {
        PsiSpan::Constant => vec![0.5; affinities.len()],
        PsiSpan::Exponential => affinities.iter().map(|&a| (scale * a).exp()).collect(),
        PsiSpan::Rescale { min_idx, max_idx } => {
            let range = affinities[max_idx] - affinities[min_idx];
            if range == 0.0 {
                return vec![0.5; affinities.len()];
            }
            affinities
                .iter()
                .map(|&a| (a - affinities[min_idx]) / range)
                .collect()
        }
    }
}

pub(crate) fn psi_transform(affinities: &[f64], mode: PsiMode, scale: f64) -> (Vec<f64>, PsiSpan) {
    let span = match mode {
        PsiMode::Exponential => PsiSpan::Exponential,
        PsiMode::AffineRescale => {
            let mut min_idx = 0;
            let mut max_idx = 0;
            for (i, &a) in affinities.iter().enumerate().skip(1) {
                if a < affinities[min_idx] {
                    min_idx = i;
                }
                if a > affinities[max_idx] {
                    max_idx = i;
                }
            }
            if affinities[max_idx] == affinities[min_idx] {
                PsiSpan::Constant
            } else {
                PsiSpan::Rescale { min_idx, max_idx }
            }
        }
    };
    (psi_apply(affinities, span, scale), span)
}

/// Apply psi to the affinity vector and attend over the one-hot labels.
pub fn tip_x_logits<S: Scalar>(
    affinities: &[S],
    labels: &DenseMatrix<S>,
    config: &PredictorConfig<S>,
) -> Result<Logits<S>, PredictError> {
    if affinities.len() != labels.rows() {
        return Err(PredictError::DimMismatch(format!(
            "affinity length {} != label rows {}",
            affinities.len(),
            labels.rows()
        )));
    }
    let wide_aff: Vec<f64> = affinities.iter().map(|&a| wide(a)).collect();
    let (psi, _) = psi_transform(&wide_aff, config.psi_mode, wide(config.psi_scale));
    Logits::new(
        weights_through_labels(&psi, labels)
            .into_iter()
            .map(narrow)
            .collect(),
    )
}

/// Weighted sum of the three score paths.
pub fn blend_logits<S: Scalar>(
    z_zs: &Logits<S>,
    z_ta: &Logits<S>,
    z_tx: &Logits<S>,
    config: &PredictorConfig<S>,
) -> Result<Logits<S>, PredictError> {
    if z_zs.len() != z_ta.len() || z_zs.len() != z_tx.len() {
        return Err(PredictError::DimMismatch(format!(
            "logit lengths disagree: {} / {} / {}",
            z_zs.len(),
            z_ta.len(),
            z_tx.len()
        )));
    }
    let b = &config.blend;
    Logits::new(
        (0..z_zs.len())
            .map(|c| {
                narrow(
                    wide(b.zs) * wide(z_zs.values()[c])
                        + wide(b.ta) * wide(z_ta.values()[c])
                        + wide(b.tx) * wide(z_tx.values()[c]),
                )
            })
            .collect(),
    )
}

/// Blended logits for one pooled, unit-normalized test feature against the
/// pooled support. `support_log_q` may be precomputed (it does not depend
/// on the view); pass `None` to compute on demand.
pub(crate) fn blended_logits_for_feature<S: Scalar>(
    u: &[S],
    pooled: &DenseMatrix<S>,
    support_log_q: Option<&[Vec<f64>]>,
    w: &ClassTextFeatures<S>,
    labels: &DenseMatrix<S>,
    config: &PredictorConfig<S>,
) -> Result<Logits<S>, PredictError> {
    let c = labels.cols();
    let b = &config.blend;
    let tau = wide(config.class_softmax_temperature);
    let zero = Logits::new(vec![S::zero(); c])?;

    let z_zs = if b.zs > S::zero() {
        zero_shot_logits(u, w)?
    } else {
        zero.clone()
    };
    let z_ta = if b.ta > S::zero() {
        tip_adapter_logits(u, pooled, labels, config.beta)?
    } else {
        zero.clone()
    };
    let z_tx = if b.tx > S::zero() {
        let log_p = test_class_log_probs(u, w, tau);
        let owned;
        let log_q = match support_log_q {
            Some(q) => q,
            None => {
                owned = support_class_log_probs(pooled, w, tau);
                &owned
            }
        };
        let affinities = neg_kl_from_logs(&log_p, log_q);
        let (psi, _) = psi_transform(&affinities, config.psi_mode, wide(config.psi_scale));
        Logits::new(
            weights_through_labels(&psi, labels)
                .into_iter()
                .map(narrow)
                .collect(),
        )?
    } else {
        zero
    };
    blend_logits(&z_zs, &z_ta, &z_tx, config)
}

/// Per-view class distributions: pool support and view frames over the same
/// index set, blend the score paths, and soften at the class temperature.
/// The pooled view feature is unit-normalized; the pooled support is not.
pub fn predict_views<S: Scalar>(
    support_weighted: &FeatureBlock<S>,
    views: &FeatureBlock<S>,
    frame_indices: &[usize],
    w: &ClassTextFeatures<S>,
    labels: &DenseMatrix<S>,
    config: &PredictorConfig<S>,
) -> Result<Vec<Distribution<S>>, PredictError> {
    config.validate()?;
    if support_weighted.frames() != views.frames() || support_weighted.dim() != views.dim() {
        return Err(PredictError::DimMismatch(format!(
            "support is {}x{} per video, views are {}x{}",
            support_weighted.frames(),
            support_weighted.dim(),
            views.frames(),
            views.dim()
        )));
    }
    if frame_indices.is_empty() {
        return Err(PredictError::EmptySelection);
    }
    for &index in frame_indices {
        if index >= support_weighted.frames() {
            return Err(PredictError::IndexOutOfRange {
                index,
                len: support_weighted.frames(),
            });
        }
    }

    let pooled = pool_support(support_weighted, frame_indices);
    let log_q = if config.blend.tx > S::zero() {
        Some(support_class_log_probs(
            &pooled,
            w,
            wide(config.class_softmax_temperature),
        ))
    } else {
        None
    };

    let mut out = Vec::with_capacity(views.videos());
    for view in 0..views.videos() {
        let pooled_view: Vec<S> = pool_block_video(views, view, frame_indices)
            .into_iter()
            .map(narrow)
            .collect();
        let u = l2_normalize(&pooled_view)?;
        let logits = blended_logits_for_feature(
            &u,
            &pooled,
            log_q.as_deref(),
            w,
            labels,
            config,
        )?;
        out.push(softmax(logits.values(), config.class_softmax_temperature)?);
    }
    Ok(out)
}

/// Pool every support video over the same frame index set (CK x d).
pub(crate) fn pool_support<S: Scalar>(
    block: &FeatureBlock<S>,
    frame_indices: &[usize],
) -> DenseMatrix<S> {
    let rows: Vec<Vec<S>> = (0..block.videos())
        .map(|video| {
            pool_block_video(block, video, frame_indices)
                .into_iter()
                .map(narrow)
                .collect()
        })
        .collect();
    DenseMatrix::from_rows(&rows).expect("pooled rows share dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;
    use approx::assert_abs_diff_eq;

    fn class_text(rows: Vec<Vec<f64>>) -> ClassTextFeatures<f64> {
        ClassTextFeatures::new(DenseMatrix::from_rows(&rows).unwrap(), false).unwrap()
    }

    #[test]
    fn pool_frames_means_selected_rows() {
        let m = DenseMatrix::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
            vec![7.0, 8.0],
        ])
        .unwrap();
        assert_eq!(pool_frames(&m, &[1, 3]).unwrap(), vec![5.0, 6.0]);
        assert_eq!(pool_frames(&m, &[2]).unwrap(), vec![5.0, 6.0]);
        assert_eq!(
            pool_frames(&m, &(0..4).collect::<Vec<_>>()).unwrap(),
            vec![4.0, 5.0]
        );
    }

    #[test]
    fn pool_frames_rejects_bad_selection() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            pool_frames(&m, &[]),
            Err(PredictError::EmptySelection)
        ));
        assert!(matches!(
            pool_frames(&m, &[1]),
            Err(PredictError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_shot_on_orthonormal_basis() {
        let w = class_text(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let z = zero_shot_logits(&[1.0, 0.0], &w).unwrap();
        assert_eq!(z.values(), &[1.0, 0.0]);
        assert_eq!(z.argmax(), 0);
    }

    #[test]
    fn zero_shot_dot_product_oracle() {
        let w = class_text(vec![vec![1.0, 0.0], vec![0.6, 0.8]]);
        let z = zero_shot_logits(&[0.6, 0.8], &w).unwrap();
        assert_abs_diff_eq!(z.values()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(z.values()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_shot_dim_mismatch() {
        let w = class_text(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            zero_shot_logits(&[1.0, 0.0, 0.0], &w),
            Err(PredictError::DimMismatch(_))
        ));
    }

    #[test]
    fn cache_path_self_affinity_is_one() {
        let f = l2_normalize(&[0.3, -0.7, 0.1]).unwrap();
        let pooled = DenseMatrix::from_rows(&[f.clone()]).unwrap();
        let labels = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let z = tip_adapter_logits(&f, &pooled, &labels, 7.0).unwrap();
        assert_abs_diff_eq!(z.values()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cache_path_scalar_oracle() {
        // exp(-1 * (1 - 0)) on the off-class row.
        let pooled = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let labels = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let z = tip_adapter_logits(&[1.0, 0.0], &pooled, &labels, 1.0).unwrap();
        assert_abs_diff_eq!(z.values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z.values()[1], (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(z.values()[1], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn sharp_beta_prefers_matching_class() {
        let near = l2_normalize(&[0.9, 0.1]).unwrap();
        let pooled = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let labels = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let z = tip_adapter_logits(&near, &pooled, &labels, 100.0).unwrap();
        assert_eq!(z.argmax(), 0);
    }

    #[test]
    fn kl_affinity_zero_for_identical_feature() {
        let w = class_text(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let f = l2_normalize(&[0.6, 0.8]).unwrap();
        let pooled = DenseMatrix::from_rows(&[f.clone(), vec![0.9, -0.2]]).unwrap();
        let affinities = kl_affinity_vector(&f, &pooled, &w, 1.0).unwrap();
        assert_abs_diff_eq!(affinities[0], 0.0, epsilon = 1e-12);
        assert!(affinities.iter().all(|&a| a <= 1e-9));
    }

    #[test]
    fn kl_affinity_scalar_oracle() {
        // W = I, tau = 1: f = [s, s] gives p = [0.5, 0.5]; support logits
        // [0, ln 3] give q = [0.25, 0.75].
        let w = class_text(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let f = [0.3, 0.3];
        let pooled = DenseMatrix::from_rows(&[vec![0.0, 3.0f64.ln()]]).unwrap();
        let affinities = kl_affinity_vector(&f, &pooled, &w, 1.0).unwrap();
        let expected = -(0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln());
        assert_abs_diff_eq!(affinities[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(affinities[0], -0.143841, epsilon = 1e-6);
    }

    #[test]
    fn kl_affinity_identical_rows_identical_entries() {
        let w = class_text(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let row = vec![0.4, 0.6];
        let pooled = DenseMatrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let affinities = kl_affinity_vector(&[0.7, 0.3], &pooled, &w, 0.5).unwrap();
        assert_eq!(affinities[0], affinities[1]);
        assert_eq!(affinities[1], affinities[2]);
    }

    #[test]
    fn psi_rescale_hits_endpoints() {
        let labels = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let config = PredictorConfig::<f64>::default();
        let z = tip_x_logits(&[-1.0, 0.0], &labels, &config).unwrap();
        assert_eq!(z.values(), &[0.0, 1.0]);
    }

    #[test]
    fn psi_constant_vector_becomes_half() {
        let labels = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let config = PredictorConfig::<f64>::default();
        let z = tip_x_logits(&[-0.25, -0.25], &labels, &config).unwrap();
        assert_eq!(z.values(), &[0.5, 0.5]);
    }

    #[test]
    fn psi_exponential_mode() {
        let labels = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let config = PredictorConfig::<f64> {
            psi_mode: PsiMode::Exponential,
            psi_scale: 2.0,
            ..PredictorConfig::default()
        };
        let z = tip_x_logits(&[-0.5], &labels, &config).unwrap();
        assert_abs_diff_eq!(z.values()[0], (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn blend_projects_and_mixes() {
        let config_zs = PredictorConfig::<f64> {
            blend: BlendWeights { zs: 1.0, ta: 0.0, tx: 0.0 },
            ..PredictorConfig::default()
        };
        let z_zs = Logits::new(vec![1.0, 0.0]).unwrap();
        let z_ta = Logits::new(vec![0.5, 0.5]).unwrap();
        let z_tx = Logits::new(vec![0.0, 2.0]).unwrap();
        let blended = blend_logits(&z_zs, &z_ta, &z_tx, &config_zs).unwrap();
        assert_eq!(blended.values(), z_zs.values());

        let config_mixed = PredictorConfig::<f64> {
            blend: BlendWeights { zs: 1.0, ta: 0.0, tx: 0.5 },
            ..PredictorConfig::default()
        };
        let blended = blend_logits(&z_zs, &z_ta, &z_tx, &config_mixed).unwrap();
        assert_eq!(blended.values(), &[1.0, 1.0]);
    }

    #[test]
    fn blend_length_mismatch() {
        let config = PredictorConfig::<f64>::default();
        let a = Logits::new(vec![1.0]).unwrap();
        let b = Logits::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            blend_logits(&a, &b, &b, &config),
            Err(PredictError::DimMismatch(_))
        ));
    }

    #[test]
    fn predict_views_self_match_wins() {
        // One support video per class; the single view equals class 0's video.
        let v0 = l2_normalize(&[1.0, 0.2, 0.0, 0.0]).unwrap();
        let v1 = l2_normalize(&[0.0, 0.1, 1.0, 0.3]).unwrap();
        let support = FeatureBlock::from_videos(&[
            DenseMatrix::from_rows(&[v0.clone(), v0.clone()]).unwrap(),
            DenseMatrix::from_rows(&[v1.clone(), v1.clone()]).unwrap(),
        ])
        .unwrap();
        let views =
            FeatureBlock::from_videos(&[DenseMatrix::from_rows(&[v0.clone(), v0.clone()]).unwrap()])
                .unwrap();
        let w = class_text(vec![
            l2_normalize(&[1.0, 0.0, 0.0, 0.1]).unwrap(),
            l2_normalize(&[0.0, 0.0, 1.0, 0.1]).unwrap(),
        ]);
        let labels = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let config = PredictorConfig::<f64> {
            blend: BlendWeights { zs: 0.0, ta: 0.0, tx: 1.0 },
            ..PredictorConfig::default()
        };
        let dists = predict_views(&support, &views, &[0, 1], &w, &labels, &config).unwrap();
        assert_eq!(dists.len(), 1);
        assert_eq!(dists[0].argmax(), 0);
    }
}
