//! Confidence-filtered marginal entropy: keep the lowest-entropy views,
//! average their class distributions, and take the entropy of the average.

use serde::{Deserialize, Serialize};

use crate::numerics::{entropy_f64, Distribution};
use crate::scalar::{narrow, wide, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceFilter {
    /// Fraction of views kept; the `max(1, floor(rho * V))` most confident.
    pub rho: f64,
}

impl Default for ConfidenceFilter {
    fn default() -> Self {
        Self { rho: 0.1 }
    }
}

impl ConfidenceFilter {
    pub fn validate(&self) -> Result<(), crate::tuner::TunerError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(crate::tuner::TunerError::InvalidConfig(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }

    pub fn selected_count(&self, views: usize) -> usize {
        ((self.rho * views as f64).floor() as usize).max(1)
    }
}

/// Indices of the `count` lowest-entropy views, ties to the smaller index,
/// returned ascending.
pub(crate) fn select_confident(entropies: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entropies.len()).collect();
    order.sort_by(|&a, &b| {
        entropies[a]
            .partial_cmp(&entropies[b])
            .expect("finite entropies")
    });
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    picked
}

pub(crate) fn average_rows(rows: &[Vec<f64>], picked: &[usize]) -> Vec<f64> {
    let dim = rows[picked[0]].len();
    let mut mean = vec![0.0f64; dim];
    for &i in picked {
        for (acc, &x) in mean.iter_mut().zip(&rows[i]) {
            *acc += x;
        }
    }
    for x in &mut mean {
        *x /= picked.len() as f64;
    }
    mean
}

/// Marginal entropy over the most confident views. Returns the loss and the
/// selected view indices (ascending).
pub fn marginal_entropy_loss<S: Scalar>(
    view_distributions: &[Distribution<S>],
    filter: ConfidenceFilter,
) -> (S, Vec<usize>) {
    assert!(
        !view_distributions.is_empty(),
        "need at least one view distribution"
    );
    let entropies: Vec<f64> = view_distributions
        .iter()
        .map(|d| entropy_f64(d.probs()))
        .collect();
    let picked = select_confident(&entropies, filter.selected_count(view_distributions.len()));
    let rows: Vec<Vec<f64>> = view_distributions
        .iter()
        .map(|d| d.probs().iter().map(|&p| wide(p)).collect())
        .collect();
    let mean = average_rows(&rows, &picked);
    let mut acc = 0.0f64;
    for &p in &mean {
        if p > 0.0 {
            acc -= p * p.ln();
        }
    }
    (narrow(acc), picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(probs: Vec<f64>) -> Distribution<f64> {
        Distribution::new(probs).unwrap()
    }

    #[test]
    fn unanimous_one_hot_views_have_zero_loss() {
        let views = vec![dist(vec![1.0, 0.0]); 4];
        let (loss, picked) = marginal_entropy_loss(&views, ConfidenceFilter { rho: 1.0 });
        assert_eq!(loss, 0.0);
        assert_eq!(picked, [0, 1, 2, 3]);
    }

    #[test]
    fn disagreeing_one_hot_views_hit_ln2() {
        let views = vec![dist(vec![1.0, 0.0]), dist(vec![0.0, 1.0])];
        let (loss, _) = marginal_entropy_loss(&views, ConfidenceFilter { rho: 1.0 });
        assert_abs_diff_eq!(loss, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn rho_floor_selects_three_of_32() {
        let views: Vec<Distribution<f64>> = (0..32).map(|_| dist(vec![0.5, 0.5])).collect();
        let (_, picked) = marginal_entropy_loss(&views, ConfidenceFilter { rho: 0.1 });
        assert_eq!(picked.len(), 3);
    }

    #[test]
    fn selection_prefers_low_entropy_then_low_index() {
        let views = vec![
            dist(vec![0.5, 0.5]),   // high entropy
            dist(vec![0.9, 0.1]),   // low entropy
            dist(vec![0.9, 0.1]),   // tie with view 1
            dist(vec![0.6, 0.4]),
        ];
        let (_, picked) = marginal_entropy_loss(&views, ConfidenceFilter { rho: 0.5 });
        assert_eq!(picked, [1, 2]);
    }

    #[test]
    fn at_least_one_view_survives_tiny_rho() {
        let views = vec![dist(vec![0.5, 0.5]); 3];
        let filter = ConfidenceFilter { rho: 0.01 };
        assert_eq!(filter.selected_count(3), 1);
        let (_, picked) = marginal_entropy_loss(&views, filter);
        assert_eq!(picked, [0]);
    }
}
