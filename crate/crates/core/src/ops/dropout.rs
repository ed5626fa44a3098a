//! Inverted dropout: survivors are scaled by 1/(1-rate) at training time so
//! inference is a plain identity.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub rng_seed: u64,
}

impl DropoutSpec {
    pub fn new(rate: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(alloc::format!(
                "dropout rate {rate} must lie in [0, 1)"
            )));
        }
        Ok(DropoutSpec { rate, rng_seed })
    }
}

/// Keep-mask drawn from the spec's seed; `None` when dropout is inactive.
pub type DropoutMask = Option<Vec<bool>>;

/// Applies dropout, returning the mask needed to route gradients back.
pub fn dropout_with_mask<F: Real>(
    input: &Tensor3<F>,
    spec: &DropoutSpec,
    training: bool,
) -> (Tensor3<F>, DropoutMask) {
    if !training || spec.rate == 0.0 {
        return (input.clone(), None);
    }
    let mut stream = rng::stream(spec.rng_seed);
    let scale = F::of(1.0 / (1.0 - spec.rate));
    let mut mask = Vec::with_capacity(input.len());
    let out = input.map(|v| {
        let keep = stream.gen::<f64>() >= spec.rate;
        mask.push(keep);
        if keep {
            v * scale
        } else {
            F::zero()
        }
    });
    (out, Some(mask))
}

pub fn dropout<F: Real>(input: &Tensor3<F>, spec: &DropoutSpec, training: bool) -> Tensor3<F> {
    dropout_with_mask(input, spec, training).0
}

/// Backward: gradients flow only through survivors, with the same scale.
pub fn dropout_grad<F: Real>(upstream: &Tensor3<F>, mask: &DropoutMask, rate: f64) -> Tensor3<F> {
    match mask {
        None => upstream.clone(),
        Some(mask) => {
            let scale = F::of(1.0 / (1.0 - rate));
            let mut out = upstream.clone();
            for (v, &keep) in out.data_mut().iter_mut().zip(mask) {
                *v = if keep { *v * scale } else { F::zero() };
            }
            out
        }
    }
}
