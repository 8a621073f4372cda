//! AdamW with decoupled weight decay, written against flat f64 parameter
//! vectors.

use serde::{Deserialize, Serialize};

use crate::tuner::TunerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamwConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamwConfig {
    pub fn validate(&self) -> Result<(), TunerError> {
        if !(self.lr > 0.0) {
            return Err(TunerError::InvalidConfig("lr must be positive".into()));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(TunerError::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {beta}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(TunerError::InvalidConfig("eps must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(TunerError::InvalidConfig(
                "weight_decay must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Exponential moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    config: AdamwConfig,
}

impl OptimizerState {
    pub fn new(param_count: usize, config: AdamwConfig) -> Result<Self, TunerError> {
        config.validate()?;
        Ok(Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamwConfig {
        &self.config
    }
}

/// One AdamW update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, both bias-corrected,
/// then `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`.
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
) -> Result<(), TunerError> {
    if params.len() != state.first_moment.len() || grads.len() != params.len() {
        return Err(TunerError::ShapeMismatch(format!(
            "optimizer holds {} params, got {} params / {} grads",
            state.first_moment.len(),
            params.len(),
            grads.len()
        )));
    }
    let cfg = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        let v = &mut state.second_moment[i];
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + cfg.lr * cfg.weight_decay * params[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_zero_decay_is_stationary() {
        let mut state = OptimizerState::new(3, AdamwConfig::default()).unwrap();
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        for _ in 0..5 {
            adamw_step(&mut state, &mut params, &[0.0; 3]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_closed_form() {
        // theta=1, g=0.5, lr=1e-3, wd=0.01, eps ~ 0:
        // m_hat=0.5, v_hat=0.25, update = 1e-3 * 0.5/0.5 = 1e-3,
        // decay = 1e-3 * 0.01 * 1 = 1e-5, so theta = 0.99899.
        let config = AdamwConfig {
            weight_decay: 0.01,
            eps: 1e-16,
            ..AdamwConfig::default()
        };
        let mut state = OptimizerState::new(1, config).unwrap();
        let mut params = vec![1.0];
        adamw_step(&mut state, &mut params, &[0.5]).unwrap();
        assert_abs_diff_eq!(params[0], 0.99899, epsilon = 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let config = AdamwConfig {
            eps: 1e-16,
            ..AdamwConfig::default()
        };
        let mut state = OptimizerState::new(4, config).unwrap();
        let mut params = vec![0.3, -0.7, 2.0, -1.0];
        let grads = [0.9, -0.1, 1e-4, -3.0];
        let before = params.clone();
        adamw_step(&mut state, &mut params, &grads).unwrap();
        for i in 0..4 {
            let moved = params[i] - before[i];
            assert!(moved * grads[i] < 0.0, "coord {i} moved with the gradient");
            // m_hat / sqrt(v_hat) collapses to sign(g) at step 1.
            assert_abs_diff_eq!(moved.abs(), 1e-3, epsilon = 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = OptimizerState::new(2, AdamwConfig::default()).unwrap();
        let mut params = vec![0.0; 3];
        assert!(matches!(
            adamw_step(&mut state, &mut params, &[0.0; 3]),
            Err(TunerError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(AdamwConfig { lr: 0.0, ..AdamwConfig::default() }.validate().is_err());
        assert!(AdamwConfig { beta1: 1.0, ..AdamwConfig::default() }.validate().is_err());
        assert!(AdamwConfig { weight_decay: -0.1, ..AdamwConfig::default() }.validate().is_err());
        assert!(AdamwConfig::default().validate().is_ok());
    }
}
