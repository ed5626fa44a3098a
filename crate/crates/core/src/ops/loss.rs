//! Sparse categorical cross-entropy over softmax outputs.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::activation::softmax;
use crate::real::Real;

/// Probabilities below this are clamped before the log so an exactly-zero
/// class probability yields a large but finite loss.
pub const LOG_CLAMP: f64 = 1e-12;

/// -ln(probs[label]), clamped at `LOG_CLAMP`.
pub fn sparse_categorical_crossentropy<F: Real>(probs: &[F], label: usize) -> Result<F> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs[label].max(F::of(LOG_CLAMP));
    Ok(-p.ln())
}

/// Gradient of the fused softmax + cross-entropy w.r.t. the logits:
/// probs - onehot(label).
pub fn softmax_ce_grad<F: Real>(probs: &[F], label: usize) -> Result<Vec<F>> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let mut grad = probs.to_vec();
    grad[label] = grad[label] - F::one();
    Ok(grad)
}

/// Convenience: loss, logit gradient, and probabilities straight from logits.
pub fn softmax_ce_from_logits<F: Real>(
    logits: &[F],
    label: usize,
) -> Result<(F, Vec<F>, Vec<F>)> {
    let probs = softmax(logits)?;
    let loss = sparse_categorical_crossentropy(&probs, label)?;
    let grad = softmax_ce_grad(&probs, label)?;
    Ok((loss, grad, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onehot_probs_give_zero_loss() {
        let loss = sparse_categorical_crossentropy(&[0.0f64, 1.0, 0.0], 1).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_probs_give_ln_of_class_count() {
        let third = 1.0f64 / 3.0;
        let loss = sparse_categorical_crossentropy(&[third; 3], 2).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let loss = sparse_categorical_crossentropy(&[1.0f64, 0.0], 1).unwrap();
        assert!(loss.is_finite());
        assert!((loss - (-LOG_CLAMP.ln())).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(matches!(
            sparse_categorical_crossentropy(&[0.5f64, 0.5], 2).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn fused_gradient_is_probs_minus_onehot() {
        let (_, grad, probs) = softmax_ce_from_logits(&[0.2f64, 1.1, -0.7], 1).unwrap();
        assert!((grad[0] - probs[0]).abs() < 1e-12);
        assert!((grad[1] - (probs[1] - 1.0)).abs() < 1e-12);
        assert!((grad[2] - probs[2]).abs() < 1e-12);
        let sum: f64 = grad.iter().sum();
        assert!(sum.abs() < 1e-12);
    }
}
