//! Elementwise activations and the softmax head.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => relu(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative as a function of the pre-activation value.
    #[inline]
    pub fn derivative<F: Real>(self, pre: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if pre > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(pre);
                s * (F::one() - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// max(0, x)
#[inline]
pub fn relu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

/// 1 / (1 + e^-x), always in (0, 1).
#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Stabilized softmax: the maximum is subtracted before exponentiation, so
/// the result is shift-invariant and never overflows.
pub fn softmax<F: Real>(logits: &[F]) -> Result<Vec<F>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    let mut max = logits[0];
    for &z in &logits[1..] {
        if z > max {
            max = z;
        }
    }
    let mut out: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let mut sum = F::zero();
    for &e in &out {
        sum += e;
    }
    for e in &mut out {
        *e = *e / sum;
    }
    Ok(out)
}

/// Smallest index attaining the maximum.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
