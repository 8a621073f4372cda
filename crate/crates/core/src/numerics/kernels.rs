//! Shared numeric kernels: normalization, stable softmax, KL divergence,
//! entropy, and top-k selection.
//!
//! Conventions: natural log everywhere, 64-bit accumulation regardless of
//! the element type, `0 * ln 0 == 0`.

use crate::numerics::NumericsError;
use crate::scalar::{narrow, wide, Scalar};

/// Q entries are floored at this value before the log in [`kl_divergence`];
/// stable softmax can emit exact zeros and Q sits in a denominator.
pub const KL_EPSILON_Q: f64 = 1e-12;

/// Probability vector: nonnegative entries summing to one within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<S: Scalar>(Vec<S>);

impl<S: Scalar> Distribution<S> {
    pub fn new(probs: Vec<S>) -> Result<Self, NumericsError> {
        if probs.iter().any(|p| !p.is_finite() || *p < S::zero()) {
            return Err(NumericsError::InvalidDistribution);
        }
        let sum: f64 = probs.iter().map(|&p| wide(p)).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(NumericsError::InvalidDistribution);
        }
        Ok(Self(probs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[S] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Euclidean norm, accumulated in f64.
pub fn l2_norm<S: Scalar>(v: &[S]) -> f64 {
    v.iter().map(|&x| wide(x) * wide(x)).sum::<f64>().sqrt()
}

/// Dot product, accumulated in f64.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| wide(x) * wide(y)).sum()
}

/// Scale `v` to unit Euclidean norm, preserving direction.
pub fn l2_normalize<S: Scalar>(v: &[S]) -> Result<Vec<S>, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::ZeroVector);
    }
    let norm = l2_norm(v);
    if norm <= 1e-12 {
        return Err(NumericsError::ZeroVector);
    }
    Ok(v.iter().map(|&x| narrow(wide(x) / norm)).collect())
}

/// Temperature softmax with max-subtraction.
pub fn softmax<S: Scalar>(logits: &[S], temperature: S) -> Result<Distribution<S>, NumericsError> {
    if !(temperature > S::zero()) {
        return Err(NumericsError::NonPositiveTemperature);
    }
    if logits.is_empty() {
        return Err(NumericsError::ZeroVector);
    }
    let tau = wide(temperature);
    let scaled: Vec<f64> = logits.iter().map(|&z| wide(z) / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Distribution(exps.iter().map(|&e| narrow(e / sum)).collect()))
}

/// Log-softmax of `logits / temperature`, exact where softmax would underflow.
pub(crate) fn log_softmax_scaled(scaled: &[f64]) -> Vec<f64> {
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|z| z - lse).collect()
}

/// KL(P || Q) in nats. Terms with `P_i = 0` are skipped; Q is floored at
/// [`KL_EPSILON_Q`] before the log.
pub fn kl_divergence<S: Scalar>(
    p: &Distribution<S>,
    q: &Distribution<S>,
) -> Result<S, NumericsError> {
    if p.len() != q.len() {
        return Err(NumericsError::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let mut acc = 0.0f64;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        let pi = wide(pi);
        if pi == 0.0 {
            continue;
        }
        let qi = wide(qi).max(KL_EPSILON_Q);
        acc += pi * (pi / qi).ln();
    }
    Ok(narrow(acc))
}

/// Shannon entropy in nats, with `0 * ln 0 == 0`.
pub fn entropy<S: Scalar>(p: &Distribution<S>) -> S {
    narrow(entropy_f64(p.probs()))
}

pub(crate) fn entropy_f64<S: Scalar>(probs: &[S]) -> f64 {
    let mut acc = 0.0f64;
    for &pi in probs {
        let pi = wide(pi);
        if pi > 0.0 {
            acc -= pi * pi.ln();
        }
    }
    acc
}

/// Indices of the k largest values, ties broken by smaller index, returned
/// in ascending order.
pub fn topk_indices<S: Scalar>(values: &[S], k: usize) -> Result<Vec<usize>, NumericsError> {
    if k == 0 || k > values.len() {
        return Err(NumericsError::KOutOfRange {
            k,
            len: values.len(),
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps the smaller index first among equal values.
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite values"));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
