//! Finite-difference gradient oracle.
//!
//! Central differences over a deterministic loss function, used to verify
//! every hand-written backward pass in this crate. Verification runs in
//! `f64`; the checks themselves live in the test suites.

use alloc::vec::Vec;

use crate::real::Real;

/// (f(x + h) - f(x - h)) / 2h per parameter.
pub fn finite_difference_gradient<F, L>(params: &[F], step: F, mut loss: L) -> Vec<F>
where
    F: Real,
    L: FnMut(&[F]) -> F,
{
    let two = F::of(2.0);
    let mut scratch = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = scratch[i];
        scratch[i] = original + step;
        let plus = loss(&scratch);
        scratch[i] = original - step;
        let minus = loss(&scratch);
        scratch[i] = original;
        grad.push((plus - minus) / (two * step));
    }
    grad
}

/// Largest relative elementwise deviation, with an absolute floor so
/// near-zero gradients do not blow the ratio up.
pub fn max_relative_error<F: Real>(analytic: &[F], numeric: &[F], floor: F) -> F {
    let mut worst = F::zero();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let grad = finite_difference_gradient(&[3.0f64], 1e-4, |p| p[0] * p[0]);
        assert!((grad[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn linear_function_is_exact_for_any_step() {
        for &h in &[1e-1, 1e-3, 1e-6] {
            let grad =
                finite_difference_gradient(&[1.0f64, -2.0], h, |p| 3.0 * p[0] - 0.5 * p[1] + 7.0);
            assert!((grad[0] - 3.0).abs() < 1e-7);
            assert!((grad[1] + 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn relative_error_uses_the_floor() {
        let e = max_relative_error(&[0.0f64], &[1e-9], 1e-6);
        assert!(e < 1e-2);
    }
}
