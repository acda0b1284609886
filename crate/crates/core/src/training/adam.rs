use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powf(state.t as f64);
    let c2 = 1.0 - beta2.powf(state.t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut theta = [0.0];
        let mut state = AdamState::new(1, AdamConfig { lr: 0.1, ..Default::default() });
        adam_step(&mut theta, &[1.0], &mut state).unwrap();
        assert!((theta[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut theta = [0.3, -2.0];
        let mut state = AdamState::new(2, AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut theta, &[0.0, 0.0], &mut state).unwrap();
        }
        assert_eq!(theta, [0.3, -2.0]);
    }

    #[test]
    fn first_step_moves_toward_the_minimum() {
        for (theta0, a) in [(3.0, 1.0), (-2.0, 0.5), (0.0, -4.0)] {
            let mut theta = [theta0];
            let mut state = AdamState::new(1, AdamConfig::default());
            let g = 2.0 * (theta0 - a);
            adam_step(&mut theta, &[g], &mut state).unwrap();
            assert!((theta[0] - a).abs() < (theta0 - a).abs());
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(adam_step(&mut [0.0], &[1.0], &mut state).is_err());
    }
}
