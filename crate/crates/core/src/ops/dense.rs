//! Fully connected layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::activation::Activation;
use crate::real::Real;

/// Weights are row-major `[out][in]`; one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> DenseLayer<F> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<F>, bias: Vec<F>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Dimension(format!(
                "dense weights {} / bias {} do not match {in_dim} -> {out_dim}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weights: vec![F::zero(); in_dim * out_dim],
            bias: vec![F::zero(); out_dim],
        }
    }
}

pub struct DenseGradients<F> {
    pub input: Vec<F>,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

fn check_lengths<F>(input: &[F], in_dim: usize, out_dim: usize, weights: &[F]) -> Result<()> {
    if input.len() != in_dim {
        return Err(Error::Dimension(format!(
            "input length {} does not match layer input {in_dim}",
            input.len()
        )));
    }
    if weights.len() != in_dim * out_dim {
        return Err(Error::Dimension("dense weight buffer mismatch".into()));
    }
    Ok(())
}

/// out = activation(W x + b) over weight slices.
pub fn dense_forward<F: Real>(
    input: &[F],
    in_dim: usize,
    out_dim: usize,
    weights: &[F],
    bias: &[F],
    activation: Activation,
) -> Result<Vec<F>> {
    check_lengths(input, in_dim, out_dim, weights)?;
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let mut acc = bias[o];
        for (&w, &x) in row.iter().zip(input) {
            acc += w * x;
        }
        out.push(activation.apply(acc));
    }
    Ok(out)
}

/// Linear-stage gradients given the upstream gradient at the pre-activation
/// output.
pub fn dense_backward<F: Real>(
    input: &[F],
    in_dim: usize,
    out_dim: usize,
    weights: &[F],
    upstream: &[F],
) -> Result<DenseGradients<F>> {
    check_lengths(input, in_dim, out_dim, weights)?;
    if upstream.len() != out_dim {
        return Err(Error::Dimension(format!(
            "upstream length {} does not match layer output {out_dim}",
            upstream.len()
        )));
    }
    let mut grad_input = vec![F::zero(); in_dim];
    let mut grad_weights = vec![F::zero(); in_dim * out_dim];
    for o in 0..out_dim {
        let u = upstream[o];
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_weights[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grad_input[i] += row[i] * u;
            grow[i] = input[i] * u;
        }
    }
    Ok(DenseGradients {
        input: grad_input,
        weights: grad_weights,
        bias: upstream.to_vec(),
    })
}

pub fn dense<F: Real>(input: &[F], layer: &DenseLayer<F>, activation: Activation) -> Result<Vec<F>> {
    dense_forward(
        input,
        layer.in_dim,
        layer.out_dim,
        &layer.weights,
        &layer.bias,
        activation,
    )
}

pub fn dense_grad<F: Real>(
    input: &[F],
    layer: &DenseLayer<F>,
    upstream: &[F],
) -> Result<DenseGradients<F>> {
    dense_backward(input, layer.in_dim, layer.out_dim, &layer.weights, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut layer = DenseLayer::zeros(3, 3);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0f64;
        }
        let out = dense(&[0.5, -1.0, 2.0], &layer, Activation::Identity).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let layer = DenseLayer::<f64>::zeros(4, 2);
        assert!(matches!(
            dense(&[1.0; 3], &layer, Activation::Identity).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn flattened_feature_map_matches_head_dims() {
        // 5*5*64 = 1600 inputs feeding the 128-node layer
        let layer = DenseLayer::<f32>::zeros(1600, 128);
        let out = dense(&vec![0.0f32; 1600], &layer, Activation::Relu).unwrap();
        assert_eq!(out.len(), 128);
    }

    #[test]
    fn backward_shapes_and_bias_grad() {
        let layer = DenseLayer::new(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.0; 3])
            .unwrap();
        let grads = dense_grad(&[1.0, -1.0], &layer, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(grads.bias, vec![0.1, 0.2, 0.3]);
        // grad_input[i] = sum_o W[o][i] * u[o]
        assert!((grads.input[0] - (1.0 * 0.1 + 3.0 * 0.2 + 5.0 * 0.3)).abs() < 1e-12);
        assert!((grads.input[1] - (2.0 * 0.1 + 4.0 * 0.2 + 6.0 * 0.3)).abs() < 1e-12);
        // grad_W[o][i] = x[i] * u[o]
        assert_eq!(grads.weights, vec![0.1, -0.1, 0.2, -0.2, 0.3, -0.3]);
    }
}
