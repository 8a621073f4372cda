//! Analytic gradients of the confidence-filtered marginal-entropy objective
//! with respect to the factorized weights, plus the central-difference
//! oracle used to verify them.
//!
//! Non-differentiable selections (frame set, confident views, rescale
//! anchors) are constants within one gradient evaluation; the oracle
//! re-evaluates the loss with exactly those selections frozen, so the two
//! paths differentiate the same smooth function.

use crate::data::ClassTextFeatures;
use crate::numerics::{l2_normalize, log_softmax_scaled, DenseMatrix, FeatureBlock};
use crate::predict::PredictorConfig;
use crate::scalar::{wide, Scalar};
use crate::tuner::loss::{average_rows, select_confident, ConfidenceFilter};
use crate::tuner::{FactorizedWeights, TunerError};

/// Borrowed problem data for one tuning objective.
pub struct GradInputs<'a, S: Scalar> {
    pub support: &'a FeatureBlock<S>,
    pub labels: &'a DenseMatrix<S>,
    pub views: &'a FeatureBlock<S>,
    pub class_text: &'a ClassTextFeatures<S>,
    pub config: &'a PredictorConfig<S>,
    pub filter: ConfidenceFilter,
}

/// How one view's psi map is anchored. Rescale anchors hold the full sets
/// of value-tied indices so exact duplicates share gradient symmetrically
/// (the frozen re-evaluation averages the anchor sets, which reduces to the
/// plain min/max for generic inputs).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FrozenPsi {
    Constant,
    Exponential,
    Rescale {
        min_set: Vec<usize>,
        max_set: Vec<usize>,
    },
}

/// Selections fixed by one analytic evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    /// Confidence-selected view indices, ascending.
    pub selected_views: Vec<usize>,
    /// Psi anchoring per selected view (parallel to `selected_views`).
    pub(crate) spans: Vec<FrozenPsi>,
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub loss: f64,
    /// dLoss / d video-weight, length CK.
    pub grad_video: Vec<f64>,
    /// dLoss / d frame-weight, length T; zero outside the frame selection.
    pub grad_frame: Vec<f64>,
    pub plan: SelectionPlan,
}

#[derive(Debug, Clone)]
pub struct FdResult {
    pub loss: f64,
    pub grad_video: Vec<f64>,
    pub grad_frame: Vec<f64>,
}

/// Flattened f64 mirror of the inputs, fixed for one evaluation.
struct Ctx {
    ck: usize,
    classes: usize,
    frames: usize,
    dim: usize,
    support: Vec<f64>,
    class_of: Vec<usize>,
    w_rows: Vec<Vec<f64>>,
    /// Normalized pooled view features (constant in the weights).
    u: Vec<Vec<f64>>,
    frame_indices: Vec<usize>,
    beta: f64,
    tau: f64,
    w_zs: f64,
    w_ta: f64,
    w_tx: f64,
    psi_exponential: bool,
    psi_scale: f64,
    selected_count: usize,
}

impl Ctx {
    fn new<S: Scalar>(
        inputs: &GradInputs<'_, S>,
        frame_indices: &[usize],
    ) -> Result<Self, TunerError> {
        let support = inputs.support;
        let views = inputs.views;
        let w = inputs.class_text;
        inputs.config.validate()?;
        inputs.filter.validate()?;
        if support.frames() != views.frames() || support.dim() != views.dim() {
            return Err(TunerError::ShapeMismatch(format!(
                "support {}x{} vs views {}x{} per video",
                support.frames(),
                support.dim(),
                views.frames(),
                views.dim()
            )));
        }
        if w.dim() != support.dim() || w.classes() != inputs.labels.cols() {
            return Err(TunerError::ShapeMismatch(format!(
                "class-text {}x{} vs support dim {} and {} label columns",
                w.classes(),
                w.dim(),
                support.dim(),
                inputs.labels.cols()
            )));
        }
        if inputs.labels.rows() != support.videos() {
            return Err(TunerError::ShapeMismatch(format!(
                "{} label rows for {} support videos",
                inputs.labels.rows(),
                support.videos()
            )));
        }
        if frame_indices.is_empty() {
            return Err(TunerError::Predict(
                crate::predict::PredictError::EmptySelection,
            ));
        }
        for &t in frame_indices {
            if t >= support.frames() {
                return Err(TunerError::Predict(
                    crate::predict::PredictError::IndexOutOfRange {
                        index: t,
                        len: support.frames(),
                    },
                ));
            }
        }

        let dim = support.dim();
        let class_of = (0..support.videos())
            .map(|j| crate::numerics::argmax(inputs.labels.row(j)))
            .collect();
        let w_rows = w
            .matrix()
            .iter_rows()
            .map(|row| row.iter().map(|&x| wide(x)).collect())
            .collect();

        let mut u = Vec::with_capacity(views.videos());
        for view in 0..views.videos() {
            let mut acc = vec![0.0f64; dim];
            for &t in frame_indices {
                for (a, &x) in acc.iter_mut().zip(views.frame(view, t)) {
                    *a += wide(x);
                }
            }
            for a in &mut acc {
                *a /= frame_indices.len() as f64;
            }
            u.push(l2_normalize(&acc)?);
        }

        Ok(Self {
            ck: support.videos(),
            classes: inputs.labels.cols(),
            frames: support.frames(),
            dim,
            support: support.data().iter().map(|&x| wide(x)).collect(),
            class_of,
            w_rows,
            u,
            frame_indices: frame_indices.to_vec(),
            beta: wide(inputs.config.beta),
            tau: wide(inputs.config.class_softmax_temperature),
            w_zs: wide(inputs.config.blend.zs),
            w_ta: wide(inputs.config.blend.ta),
            w_tx: wide(inputs.config.blend.tx),
            psi_exponential: matches!(inputs.config.psi_mode, crate::predict::PsiMode::Exponential),
            psi_scale: wide(inputs.config.psi_scale),
            selected_count: inputs.filter.selected_count(views.videos()),
        })
    }

    fn frame(&self, video: usize, t: usize) -> &[f64] {
        let start = (video * self.frames + t) * self.dim;
        &self.support[start..start + self.dim]
    }

    /// R_j = mean over selected frames of `frame_weight[t] * F[j,t,:]`.
    fn half_pool(&self, frame_weights: &[f64]) -> Vec<Vec<f64>> {
        let k = self.frame_indices.len() as f64;
        (0..self.ck)
            .map(|j| {
                let mut acc = vec![0.0f64; self.dim];
                for &t in &self.frame_indices {
                    let rf = frame_weights[t];
                    for (a, &x) in acc.iter_mut().zip(self.frame(j, t)) {
                        *a += rf * x;
                    }
                }
                for a in &mut acc {
                    *a /= k;
                }
                acc
            })
            .collect()
    }

    fn dot_w(&self, x: &[f64]) -> Vec<f64> {
        self.w_rows
            .iter()
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ViewOut {
    probs: Vec<f64>,
    entropy: f64,
    /// Test-side class probabilities (KL path only).
    p: Vec<f64>,
    kappa: Vec<f64>,
    psi: Vec<f64>,
    span: FrozenPsi,
    cache_affinities: Vec<f64>,
}

/// Discover the rescale anchoring of an affinity vector: the sets of
/// indices tied at the min and max values.
fn rescale_anchors(kappa: &[f64]) -> FrozenPsi {
    let mut min_val = kappa[0];
    let mut max_val = kappa[0];
    for &x in &kappa[1..] {
        if x < min_val {
            min_val = x;
        }
        if x > max_val {
            max_val = x;
        }
    }
    if min_val == max_val {
        return FrozenPsi::Constant;
    }
    let collect = |target: f64| -> Vec<usize> {
        kappa
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == target)
            .map(|(i, _)| i)
            .collect()
    };
    FrozenPsi::Rescale {
        min_set: collect(min_val),
        max_set: collect(max_val),
    }
}

fn mean_at(kappa: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&i| kappa[i]).sum::<f64>() / set.len() as f64
}

/// Evaluate psi under a fixed anchoring.
fn frozen_psi_apply(kappa: &[f64], span: &FrozenPsi, scale: f64) -> Vec<f64> {
    match span {
        FrozenPsi::Constant => vec![0.5; kappa.len()],
        FrozenPsi::Exponential => kappa.iter().map(|&a| (scale * a).exp()).collect(),
        FrozenPsi::Rescale { min_set, max_set } => {
            let mn = mean_at(kappa, min_set);
            let mx = mean_at(kappa, max_set);
            let range = mx - mn;
            if range == 0.0 {
                return vec![0.5; kappa.len()];
            }
            kappa.iter().map(|&a| (a - mn) / range).collect()
        }
    }
}

fn softmax_f64(scaled: &[f64]) -> Vec<f64> {
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn entropy_vec(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Forward pass for one view: blended logits then class softmax.
fn view_forward(
    ctx: &Ctx,
    view: usize,
    g_pool: &[Vec<f64>],
    log_q: Option<&[Vec<f64>]>,
    frozen_span: Option<&FrozenPsi>,
) -> ViewOut {
    let u = &ctx.u[view];
    let mut z = vec![0.0f64; ctx.classes];

    if ctx.w_zs > 0.0 {
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += ctx.w_zs * ctx.w_rows[c].iter().zip(u).map(|(&a, &b)| a * b).sum::<f64>();
        }
    }

    let mut cache_affinities = Vec::new();
    if ctx.w_ta > 0.0 {
        cache_affinities = g_pool
            .iter()
            .map(|g| {
                let sim: f64 = g.iter().zip(u).map(|(&a, &b)| a * b).sum();
                (-ctx.beta * (1.0 - sim)).exp()
            })
            .collect();
        for (j, &a) in cache_affinities.iter().enumerate() {
            z[ctx.class_of[j]] += ctx.w_ta * a;
        }
    }

    let mut p = Vec::new();
    let mut kappa = Vec::new();
    let mut psi = Vec::new();
    let mut span = FrozenPsi::Exponential;
    if ctx.w_tx > 0.0 {
        let log_q = log_q.expect("log_q precomputed when the KL path is active");
        let log_p = log_softmax_scaled(
            &ctx.dot_w(u).iter().map(|&s| s / ctx.tau).collect::<Vec<_>>(),
        );
        p = log_p.iter().map(|&lp| lp.exp()).collect();
        kappa = log_q
            .iter()
            .map(|lq| {
                p.iter()
                    .zip(&log_p)
                    .zip(lq)
                    .filter(|((&pc, _), _)| pc > 0.0)
                    .map(|((&pc, &lp), &lqc)| pc * (lqc - lp))
                    .sum()
            })
            .collect();
        span = match frozen_span {
            Some(frozen) => frozen.clone(),
            None if ctx.psi_exponential => FrozenPsi::Exponential,
            None => rescale_anchors(&kappa),
        };
        psi = frozen_psi_apply(&kappa, &span, ctx.psi_scale);
        for (j, &w) in psi.iter().enumerate() {
            z[ctx.class_of[j]] += ctx.w_tx * w;
        }
    }

    let probs = softmax_f64(&z.iter().map(|&zc| zc / ctx.tau).collect::<Vec<_>>());
    let entropy = entropy_vec(&probs);
    ViewOut {
        probs,
        entropy,
        p,
        kappa,
        psi,
        span,
        cache_affinities,
    }
}

struct Forward {
    loss: f64,
    half: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    views: Vec<Option<ViewOut>>,
    selected: Vec<usize>,
    mean_probs: Vec<f64>,
}

fn forward(ctx: &Ctx, rv: &[f64], rf: &[f64], plan: Option<&SelectionPlan>) -> Forward {
    let half = ctx.half_pool(rf);
    let g_pool: Vec<Vec<f64>> = half
        .iter()
        .zip(rv)
        .map(|(h, &scale)| h.iter().map(|&x| scale * x).collect())
        .collect();

    let (log_q, q) = if ctx.w_tx > 0.0 {
        let log_q: Vec<Vec<f64>> = g_pool
            .iter()
            .map(|g| {
                log_softmax_scaled(&ctx.dot_w(g).iter().map(|&s| s / ctx.tau).collect::<Vec<_>>())
            })
            .collect();
        let q = log_q
            .iter()
            .map(|lq| lq.iter().map(|&x| x.exp()).collect())
            .collect();
        (Some(log_q), q)
    } else {
        (None, Vec::new())
    };

    let view_count = ctx.u.len();
    let mut views: Vec<Option<ViewOut>> = vec![None; view_count];
    let selected = match plan {
        Some(plan) => {
            for (slot, &view) in plan.selected_views.iter().enumerate() {
                views[view] = Some(view_forward(
                    ctx,
                    view,
                    &g_pool,
                    log_q.as_deref(),
                    Some(&plan.spans[slot]),
                ));
            }
            plan.selected_views.clone()
        }
        None => {
            for view in 0..view_count {
                views[view] = Some(view_forward(ctx, view, &g_pool, log_q.as_deref(), None));
            }
            let entropies: Vec<f64> = views
                .iter()
                .map(|v| v.as_ref().expect("all views computed").entropy)
                .collect();
            select_confident(&entropies, ctx.selected_count)
        }
    };

    let rows: Vec<Vec<f64>> = views
        .iter()
        .map(|v| v.as_ref().map(|o| o.probs.clone()).unwrap_or_default())
        .collect();
    let mean_probs = average_rows(&rows, &selected);
    let loss = entropy_vec(&mean_probs);
    Forward {
        loss,
        half,
        q,
        views,
        selected,
        mean_probs,
    }
}

/// Honest loss evaluation (selections recomputed), e.g. for reporting.
pub fn evaluate_loss<S: Scalar>(
    inputs: &GradInputs<'_, S>,
    weights: &FactorizedWeights<S>,
    frame_indices: &[usize],
) -> Result<f64, TunerError> {
    let ctx = Ctx::new(inputs, frame_indices)?;
    let (rv, rf) = widened_weights(&ctx, weights)?;
    Ok(forward(&ctx, &rv, &rf, None).loss)
}

fn widened_weights<S: Scalar>(
    ctx: &Ctx,
    weights: &FactorizedWeights<S>,
) -> Result<(Vec<f64>, Vec<f64>), TunerError> {
    if weights.video.len() != ctx.ck || weights.frame.len() != ctx.frames {
        return Err(TunerError::ShapeMismatch(format!(
            "weights ({}, {}) do not match ({}, {})",
            weights.video.len(),
            weights.frame.len(),
            ctx.ck,
            ctx.frames,
        )));
    }
    weights.validate()?;
    Ok((
        weights.video.iter().map(|&x| wide(x)).collect(),
        weights.frame.iter().map(|&x| wide(x)).collect(),
    ))
}

/// Exact gradients of the objective, holding the frame set, the confident
/// view set, and the rescale anchors fixed.
pub fn loss_gradients<S: Scalar>(
    inputs: &GradInputs<'_, S>,
    weights: &FactorizedWeights<S>,
    frame_indices: &[usize],
) -> Result<GradResult, TunerError> {
    let ctx = Ctx::new(inputs, frame_indices)?;
    let (rv, rf) = widened_weights(&ctx, weights)?;
    let fwd = forward(&ctx, &rv, &rf, None);

    let s = fwd.selected.len() as f64;
    // dLoss/d mean_prob, folded with the 1/s of the view average.
    let g_mean: Vec<f64> = fwd
        .mean_probs
        .iter()
        .map(|&p| if p > 0.0 { -(p.ln() + 1.0) / s } else { 0.0 })
        .collect();

    // Accumulate dLoss/dG_j over the selected views.
    let mut d_g = vec![vec![0.0f64; ctx.dim]; ctx.ck];
    for &view in &fwd.selected {
        let out = fwd.views[view].as_ref().expect("selected view computed");
        let u = &ctx.u[view];

        // Class softmax backward at temperature tau.
        let inner: f64 = g_mean.iter().zip(&out.probs).map(|(&g, &p)| g * p).sum();
        let dz: Vec<f64> = out
            .probs
            .iter()
            .zip(&g_mean)
            .map(|(&p, &g)| p * (g - inner) / ctx.tau)
            .collect();

        if ctx.w_ta > 0.0 {
            for j in 0..ctx.ck {
                let coef = ctx.w_ta * dz[ctx.class_of[j]] * out.cache_affinities[j] * ctx.beta;
                if coef != 0.0 {
                    for (acc, &ux) in d_g[j].iter_mut().zip(u) {
                        *acc += coef * ux;
                    }
                }
            }
        }

        if ctx.w_tx > 0.0 {
            let d_psi: Vec<f64> = (0..ctx.ck)
                .map(|j| ctx.w_tx * dz[ctx.class_of[j]])
                .collect();
            let d_kappa = psi_backward(&d_psi, &out.psi, &out.kappa, &out.span, ctx.psi_scale);
            let p_sum: f64 = out.p.iter().filter(|&&pc| pc > 0.0).sum();
            for j in 0..ctx.ck {
                if d_kappa[j] == 0.0 {
                    continue;
                }
                // d kappa_j / d eta_jc = [p_c]_+ - q_jc * p_sum
                let d_eta: Vec<f64> = out
                    .p
                    .iter()
                    .zip(&fwd.q[j])
                    .map(|(&pc, &qc)| {
                        let p_term = if pc > 0.0 { pc } else { 0.0 };
                        d_kappa[j] * (p_term - qc * p_sum)
                    })
                    .collect();
                // eta_jc = <G_j, W_c> / tau
                for (c, &de) in d_eta.iter().enumerate() {
                    if de != 0.0 {
                        for (acc, &wx) in d_g[j].iter_mut().zip(&ctx.w_rows[c]) {
                            *acc += de * wx / ctx.tau;
                        }
                    }
                }
            }
        }
    }

    // G_j = rv_j * R_j, R_j = (1/k) sum_t rf_t F_jt.
    let k = ctx.frame_indices.len() as f64;
    let grad_video: Vec<f64> = (0..ctx.ck)
        .map(|j| d_g[j].iter().zip(&fwd.half[j]).map(|(&a, &b)| a * b).sum())
        .collect();
    let mut grad_frame = vec![0.0f64; ctx.frames];
    for &t in &ctx.frame_indices {
        let mut acc = 0.0f64;
        for j in 0..ctx.ck {
            let dot: f64 = d_g[j]
                .iter()
                .zip(ctx.frame(j, t))
                .map(|(&a, &b)| a * b)
                .sum();
            acc += rv[j] * dot;
        }
        grad_frame[t] = acc / k;
    }

    let spans = fwd
        .selected
        .iter()
        .map(|&view| fwd.views[view].as_ref().expect("selected").span.clone())
        .collect();
    Ok(GradResult {
        loss: fwd.loss,
        grad_video,
        grad_frame,
        plan: SelectionPlan {
            selected_views: fwd.selected,
            spans,
        },
    })
}

/// Backward through the psi map with frozen anchoring.
fn psi_backward(
    d_psi: &[f64],
    psi: &[f64],
    kappa: &[f64],
    span: &FrozenPsi,
    scale: f64,
) -> Vec<f64> {
    match span {
        FrozenPsi::Constant => vec![0.0; d_psi.len()],
        FrozenPsi::Exponential => d_psi
            .iter()
            .zip(psi)
            .map(|(&g, &value)| g * scale * value)
            .collect(),
        FrozenPsi::Rescale { min_set, max_set } => {
            let range = mean_at(kappa, max_set) - mean_at(kappa, min_set);
            if range == 0.0 {
                return vec![0.0; d_psi.len()];
            }
            let weighted: f64 = d_psi.iter().zip(psi).map(|(&g, &value)| g * value).sum();
            let total: f64 = d_psi.iter().sum();
            let mut d_kappa: Vec<f64> = d_psi.iter().map(|&g| g / range).collect();
            // The min anchor set shares sum_j g_j (psi_j - 1); the max set
            // shares -sum_j g_j psi_j.
            let min_share = (weighted - total) / (range * min_set.len() as f64);
            for &l in min_set {
                d_kappa[l] += min_share;
            }
            let max_share = weighted / (range * max_set.len() as f64);
            for &l in max_set {
                d_kappa[l] -= max_share;
            }
            d_kappa
        }
    }
}

/// Central differences of the frozen-selection loss, coordinate by
/// coordinate, sharing the analytic evaluation's selections.
pub fn finite_difference_gradients<S: Scalar>(
    inputs: &GradInputs<'_, S>,
    weights: &FactorizedWeights<S>,
    frame_indices: &[usize],
    h: f64,
) -> Result<FdResult, TunerError> {
    if !(h > 0.0) {
        return Err(TunerError::InvalidConfig("step size h must be positive".into()));
    }
    let ctx = Ctx::new(inputs, frame_indices)?;
    let (rv, rf) = widened_weights(&ctx, weights)?;
    let base = forward(&ctx, &rv, &rf, None);
    let plan = SelectionPlan {
        selected_views: base.selected.clone(),
        spans: base
            .selected
            .iter()
            .map(|&view| base.views[view].as_ref().expect("selected").span.clone())
            .collect(),
    };

    let eval = |rv: &[f64], rf: &[f64]| forward(&ctx, rv, rf, Some(&plan)).loss;

    let mut grad_video = vec![0.0f64; ctx.ck];
    let mut rv_work = rv.clone();
    for j in 0..ctx.ck {
        let original = rv_work[j];
        rv_work[j] = original + h;
        let plus = eval(&rv_work, &rf);
        rv_work[j] = original - h;
        let minus = eval(&rv_work, &rf);
        rv_work[j] = original;
        grad_video[j] = (plus - minus) / (2.0 * h);
    }

    let mut grad_frame = vec![0.0f64; ctx.frames];
    let mut rf_work = rf.clone();
    for t in 0..ctx.frames {
        let original = rf_work[t];
        rf_work[t] = original + h;
        let plus = eval(&rv, &rf_work);
        rf_work[t] = original - h;
        let minus = eval(&rv, &rf_work);
        rf_work[t] = original;
        grad_frame[t] = (plus - minus) / (2.0 * h);
    }

    Ok(FdResult {
        loss: base.loss,
        grad_video,
        grad_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SyntheticConfig};
    use crate::predict::{BlendWeights, PsiMode};
    use crate::rng;

    fn test_config() -> PredictorConfig<f64> {
        PredictorConfig {
            class_softmax_temperature: 0.1,
            blend: BlendWeights { zs: 1.0, ta: 0.5, tx: 1.0 },
            ..PredictorConfig::default()
        }
    }

    fn synth(seed: u64) -> crate::data::SyntheticDataset {
        synth_generate(&SyntheticConfig {
            classes: 5,
            prompts_per_class: 2,
            repeats_per_prompt: 2,
            frames: 8,
            dim: 16,
            views: 8,
            test_instances: 1,
            view_noise: 0.3,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn perturbed_weights(ck: usize, t: usize, seed: u64) -> FactorizedWeights<f64> {
        let mut stream = rng::stream_from_seed(seed);
        FactorizedWeights {
            video: (0..ck)
                .map(|_| 1.0 + 0.2 * (rng::uniform_f64(&mut stream) - 0.5))
                .collect(),
            frame: (0..t)
                .map(|_| 1.0 + 0.2 * (rng::uniform_f64(&mut stream) - 0.5))
                .collect(),
        }
    }

    fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| {
                let denom = a.abs().max(n.abs());
                if denom <= 1e-6 {
                    0.0
                } else {
                    (a - n).abs() / denom
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn analytic_matches_central_differences_seed42() {
        let data = synth(42);
        let support64 = data.support.cast::<f64>();
        let test64 = data.tests[0].cast::<f64>();
        let w64 = data.class_text.cast::<f64>();
        let config = test_config();
        let inputs = GradInputs {
            support: &support64.features,
            labels: &support64.labels,
            views: &test64.views,
            class_text: &w64,
            config: &config,
            filter: ConfidenceFilter { rho: 0.5 },
        };
        let weights = perturbed_weights(support64.videos(), support64.frames(), 7);
        let frames = vec![0, 2, 3, 5, 6, 7];
        let analytic = loss_gradients(&inputs, &weights, &frames).unwrap();
        let numeric = finite_difference_gradients(&inputs, &weights, &frames, 1e-3).unwrap();
        assert!(analytic.loss.is_finite());
        assert_eq!(analytic.loss, numeric.loss);
        let rel_v = max_rel_error(&analytic.grad_video, &numeric.grad_video);
        let rel_f = max_rel_error(&analytic.grad_frame, &numeric.grad_frame);
        assert!(rel_v <= 1e-3, "video gradient rel error {rel_v}");
        assert!(rel_f <= 1e-3, "frame gradient rel error {rel_f}");
    }

    #[test]
    fn gradients_vanish_outside_frame_selection() {
        let data = synth(11);
        let support64 = data.support.cast::<f64>();
        let test64 = data.tests[0].cast::<f64>();
        let w64 = data.class_text.cast::<f64>();
        let config = test_config();
        let inputs = GradInputs {
            support: &support64.features,
            labels: &support64.labels,
            views: &test64.views,
            class_text: &w64,
            config: &config,
            filter: ConfidenceFilter::default(),
        };
        let weights = FactorizedWeights::ones(support64.videos(), support64.frames());
        let frames = vec![1, 4];
        let result = loss_gradients(&inputs, &weights, &frames).unwrap();
        for (t, &g) in result.grad_frame.iter().enumerate() {
            if !frames.contains(&t) {
                assert_eq!(g, 0.0, "frame {t} outside selection has gradient {g}");
            }
        }
        let numeric = finite_difference_gradients(&inputs, &weights, &frames, 1e-3).unwrap();
        for (t, &g) in numeric.grad_frame.iter().enumerate() {
            if !frames.contains(&t) {
                assert!(g.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn pure_text_blend_has_zero_gradients() {
        let data = synth(3);
        let support64 = data.support.cast::<f64>();
        let test64 = data.tests[0].cast::<f64>();
        let w64 = data.class_text.cast::<f64>();
        let config = PredictorConfig {
            blend: BlendWeights { zs: 1.0, ta: 0.0, tx: 0.0 },
            ..test_config()
        };
        let inputs = GradInputs {
            support: &support64.features,
            labels: &support64.labels,
            views: &test64.views,
            class_text: &w64,
            config: &config,
            filter: ConfidenceFilter::default(),
        };
        let weights = FactorizedWeights::ones(support64.videos(), support64.frames());
        let frames: Vec<usize> = (0..8).collect();
        let result = loss_gradients(&inputs, &weights, &frames).unwrap();
        assert!(result.grad_video.iter().all(|&g| g == 0.0));
        assert!(result.grad_frame.iter().all(|&g| g == 0.0));
        let numeric = finite_difference_gradients(&inputs, &weights, &frames, 1e-3).unwrap();
        assert!(numeric.grad_video.iter().all(|&g| g.abs() <= 1e-8));
        assert!(numeric.grad_frame.iter().all(|&g| g.abs() <= 1e-8));
    }

    #[test]
    fn duplicate_support_videos_share_gradients() {
        let data = synth(19);
        let mut support64 = data.support.cast::<f64>();
        // Make video 1 an exact copy of video 0 (same class by construction).
        let copy: Vec<f64> = (0..support64.frames())
            .flat_map(|t| support64.features.frame(0, t).to_vec())
            .collect();
        let mut raw = support64.features.data().to_vec();
        let stride = support64.frames() * support64.dim();
        raw[stride..2 * stride].copy_from_slice(&copy);
        support64.features = FeatureBlock::from_vec(
            support64.videos(),
            support64.frames(),
            support64.dim(),
            raw,
        )
        .unwrap();
        let test64 = data.tests[0].cast::<f64>();
        let w64 = data.class_text.cast::<f64>();
        let config = test_config();
        let inputs = GradInputs {
            support: &support64.features,
            labels: &support64.labels,
            views: &test64.views,
            class_text: &w64,
            config: &config,
            filter: ConfidenceFilter { rho: 0.5 },
        };
        let weights = FactorizedWeights::ones(support64.videos(), support64.frames());
        let frames: Vec<usize> = (0..8).collect();
        let result = loss_gradients(&inputs, &weights, &frames).unwrap();
        let diff = (result.grad_video[0] - result.grad_video[1]).abs();
        assert!(diff <= 1e-12, "duplicate videos got gradients differing by {diff}");
    }

    #[test]
    fn exponential_psi_gradcheck() {
        let data = synth(23);
        let support64 = data.support.cast::<f64>();
        let test64 = data.tests[0].cast::<f64>();
        let w64 = data.class_text.cast::<f64>();
        let config = PredictorConfig {
            psi_mode: PsiMode::Exponential,
            psi_scale: 0.5,
            ..test_config()
        };
        let inputs = GradInputs {
            support: &support64.features,
            labels: &support64.labels,
            views: &test64.views,
            class_text: &w64,
            config: &config,
            filter: ConfidenceFilter { rho: 0.25 },
        };
        let weights = perturbed_weights(support64.videos(), support64.frames(), 29);
        let frames = vec![0, 1, 2, 4];
        let analytic = loss_gradients(&inputs, &weights, &frames).unwrap();
        let numeric = finite_difference_gradients(&inputs, &weights, &frames, 1e-3).unwrap();
        assert!(max_rel_error(&analytic.grad_video, &numeric.grad_video) <= 1e-3);
        assert!(max_rel_error(&analytic.grad_frame, &numeric.grad_frame) <= 1e-3);
    }
}
