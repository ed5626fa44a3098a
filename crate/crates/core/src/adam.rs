//! Adam optimizer with bias-corrected moment estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_ALPHA: f64 = 0.001;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
    pub alpha: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Real> AdamState<F> {
    pub fn new(n_params: usize, alpha: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            t: 0,
            alpha: F::of(alpha),
            beta1: F::of(beta1),
            beta2: F::of(beta2),
            epsilon: F::of(epsilon),
        }
    }

    /// Learning rate 0.001, beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn with_defaults(n_params: usize) -> Self {
        Self::new(
            n_params,
            DEFAULT_ALPHA,
            DEFAULT_BETA1,
            DEFAULT_BETA2,
            DEFAULT_EPSILON,
        )
    }
}

/// One update: moments decay toward the gradient, the step counter is
/// bumped before bias correction, and parameters move against the
/// bias-corrected ratio. NaN/inf gradients abort before any state changes.
pub fn adam_step<F: Real>(params: &mut [F], grads: &[F], state: &mut AdamState<F>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "params {} / grads {} / state {} length mismatch",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient; step aborted".into()));
    }

    state.t += 1;
    let one = F::one();
    let b1 = state.beta1;
    let b2 = state.beta2;
    let b1t = b1.powi(state.t as i32);
    let b2t = b2.powi(state.t as i32);
    let inv_bc1 = one / (one - b1t);
    let inv_bc2 = one / (one - b2t);

    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] * inv_bc1;
        let v_hat = state.v[i] * inv_bc2;
        params[i] = params[i] - state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_setup() {
        let s = AdamState::<f64>::with_defaults(1);
        assert_eq!(s.alpha, 0.001);
        assert_eq!(s.beta1, 0.9);
        assert_eq!(s.beta2, 0.999);
    }

    #[test]
    fn zero_gradient_with_fresh_state_leaves_params_unchanged() {
        let mut params = vec![1.0f64, -2.0, 0.5];
        let mut state = AdamState::with_defaults(3);
        adam_step(&mut params, &[0.0; 3], &mut state).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, so the step is alpha * g/(|g| + eps)
        let mut params = vec![1.0f64];
        let mut state = AdamState::new(1, 0.001, 0.9, 0.999, 1e-8);
        adam_step(&mut params, &[1.0], &mut state).unwrap();
        let expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8));
        assert!((params[0] - expected).abs() < 1e-12);
        assert!((params[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let mut params = vec![0.3f64; 4];
        let mut state = AdamState::with_defaults(4);
        for step in 0..50 {
            let g = [(step as f64).sin(), -0.2, 1.5, 0.0];
            adam_step(&mut params, &g, &mut state).unwrap();
            assert!(state.v.iter().all(|&v| v >= 0.0));
        }
        assert_eq!(state.t, 50);
    }

    #[test]
    fn nan_gradient_aborts_without_touching_state() {
        let mut params = vec![1.0f64];
        let mut state = AdamState::with_defaults(1);
        let before = state.clone();
        let err = adam_step(&mut params, &[f64::NAN], &mut state).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(params, vec![1.0]);
        assert_eq!(state, before);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut params = vec![5.0f64];
        let mut state = AdamState::new(1, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let g = [2.0 * params[0]];
            adam_step(&mut params, &g, &mut state).unwrap();
        }
        assert!(params[0].abs() < 1e-2, "residual {}", params[0]);
    }
}
