//! Layer-stack network over a flat parameter store.
//!
//! The stack is a plain list of layer specs; weights for every layer live in
//! one contiguous buffer so the optimizer and the serializer can treat the
//! model as a single parameter vector. Shapes are resolved once at
//! construction and validated against every input.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::activation::Activation;
use crate::ops::conv::{conv_backward, conv_forward, ConvGeom};
use crate::ops::dense::{dense_backward, dense_forward};
use crate::ops::dropout::{dropout_grad, dropout_with_mask, DropoutMask, DropoutSpec};
use crate::ops::pool::{maxpool, maxpool_grad, PoolIndices};
use crate::ops::upsample::{upsample_nearest, upsample_nearest_grad};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool {
        window: usize,
    },
    Dense {
        out: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    UpsampleNearest {
        factor: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::UpsampleNearest { .. } => "upsample_nearest",
        }
    }
}

/// One named slice of the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub layer: usize,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Weight blob indices for a layer that has parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerBlobs {
    weights: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    input_shape: (usize, usize, usize),
    specs: Vec<LayerSpec>,
    /// shapes[i] is the input of layer i; shapes[len] is the output.
    shapes: Vec<(usize, usize, usize)>,
    blobs: Vec<ParamBlob>,
    layer_blobs: Vec<Option<LayerBlobs>>,
    params: Vec<F>,
}

/// How a forward pass treats dropout layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Infer,
    /// Dropout is active; masks are drawn from substreams of this seed so a
    /// (seed, layer) pair always produces the same mask.
    Train { dropout_seed: u64 },
}

/// Values captured by a caching forward pass, enough to run backward.
pub enum LayerCache<F> {
    Conv {
        input: Tensor3<F>,
        pre: Tensor3<F>,
    },
    Pool {
        indices: PoolIndices,
    },
    Dense {
        input: Tensor3<F>,
        pre: Vec<F>,
    },
    Dropout {
        mask: DropoutMask,
        rate: f64,
    },
    /// Pre-flatten tensor; shares the flattened buffer's contents, and is
    /// what heatmap extraction reads as "the last conv feature grid".
    Reshape {
        input: Tensor3<F>,
    },
    Upsample {
        input_shape: (usize, usize, usize),
        factor: usize,
    },
}

impl<F: Real> Network<F> {
    /// Resolves the shape chain and allocates zeroed parameters.
    pub fn new(input_shape: (usize, usize, usize), specs: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut blobs = Vec::new();
        let mut layer_blobs = Vec::with_capacity(specs.len());
        let mut offset = 0usize;

        for (li, spec) in specs.iter().enumerate() {
            let (h, w, c) = *shapes.last().expect("shape chain non-empty");
            let out_shape = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    padding,
                    stride,
                    ..
                } => {
                    let geom = ConvGeom {
                        out_channels,
                        in_channels: c,
                        kernel,
                        padding,
                        stride,
                    };
                    let (oh, ow) = geom.output_dims(h, w)?;
                    let wlen = geom.weight_len();
                    blobs.push(ParamBlob {
                        name: format!("conv{li}/kernels"),
                        layer: li,
                        offset,
                        len: wlen,
                        shape: vec![out_channels, c, kernel, kernel],
                    });
                    offset += wlen;
                    blobs.push(ParamBlob {
                        name: format!("conv{li}/bias"),
                        layer: li,
                        offset,
                        len: out_channels,
                        shape: vec![out_channels],
                    });
                    offset += out_channels;
                    layer_blobs.push(Some(LayerBlobs {
                        weights: blobs.len() - 2,
                        bias: blobs.len() - 1,
                    }));
                    (oh, ow, out_channels)
                }
                LayerSpec::MaxPool { window } => {
                    if window == 0 || h % window != 0 || w % window != 0 {
                        return Err(Error::Dimension(format!(
                            "layer {li}: {h}x{w} not divisible by pool window {window}"
                        )));
                    }
                    layer_blobs.push(None);
                    (h / window, w / window, c)
                }
                LayerSpec::Dense { out, .. } => {
                    if (h, w) != (1, 1) {
                        return Err(Error::Dimension(format!(
                            "layer {li}: dense requires a flattened input, got {h}x{w}x{c}"
                        )));
                    }
                    blobs.push(ParamBlob {
                        name: format!("dense{li}/weights"),
                        layer: li,
                        offset,
                        len: c * out,
                        shape: vec![out, c],
                    });
                    offset += c * out;
                    blobs.push(ParamBlob {
                        name: format!("dense{li}/bias"),
                        layer: li,
                        offset,
                        len: out,
                        shape: vec![out],
                    });
                    offset += out;
                    layer_blobs.push(Some(LayerBlobs {
                        weights: blobs.len() - 2,
                        bias: blobs.len() - 1,
                    }));
                    (1, 1, out)
                }
                LayerSpec::Dropout { rate } => {
                    DropoutSpec::new(rate, 0)?;
                    layer_blobs.push(None);
                    (h, w, c)
                }
                LayerSpec::Flatten => {
                    layer_blobs.push(None);
                    (1, 1, h * w * c)
                }
                LayerSpec::UpsampleNearest { factor } => {
                    if factor == 0 {
                        return Err(Error::Argument(format!(
                            "layer {li}: upsample factor must be positive"
                        )));
                    }
                    layer_blobs.push(None);
                    (h * factor, w * factor, c)
                }
            };
            shapes.push(out_shape);
        }

        Ok(Network {
            input_shape,
            specs,
            shapes,
            blobs,
            layer_blobs,
            params: vec![F::zero(); offset],
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        *self.shapes.last().expect("shape chain non-empty")
    }

    /// Shape of the tensor flowing INTO layer `i` (output for `i == len`).
    pub fn shape_at(&self, i: usize) -> (usize, usize, usize) {
        self.shapes[i]
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn blobs(&self) -> &[ParamBlob] {
        &self.blobs
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn blob_slice(&self, blob: &ParamBlob) -> &[F] {
        &self.params[blob.offset..blob.offset + blob.len]
    }

    pub fn blob_slice_mut(&mut self, blob_index: usize) -> &mut [F] {
        let b = &self.blobs[blob_index];
        let (off, len) = (b.offset, b.len);
        &mut self.params[off..off + len]
    }

    fn conv_geom(&self, li: usize) -> ConvGeom {
        match self.specs[li] {
            LayerSpec::Conv {
                out_channels,
                kernel,
                padding,
                stride,
                ..
            } => ConvGeom {
                out_channels,
                in_channels: self.shapes[li].2,
                kernel,
                padding,
                stride,
            },
            _ => unreachable!("conv geometry requested for a non-conv layer"),
        }
    }

    fn check_input(&self, input: &Tensor3<F>, layer: usize) -> Result<()> {
        if input.shape() != self.shapes[layer] {
            return Err(Error::Dimension(format!(
                "input {:?} does not match expected {:?} at layer {layer}",
                input.shape(),
                self.shapes[layer]
            )));
        }
        Ok(())
    }

    /// Inference-speed forward pass over the full stack.
    pub fn forward(&self, input: &Tensor3<F>) -> Result<Tensor3<F>> {
        self.forward_range(input, 0, self.specs.len(), Mode::Infer)
            .map(|(out, _)| out)
    }

    /// Forward over `layers[from..to]` without caches.
    pub fn forward_range(
        &self,
        input: &Tensor3<F>,
        from: usize,
        to: usize,
        mode: Mode,
    ) -> Result<(Tensor3<F>, ())> {
        self.check_input(input, from)?;
        let mut cur = input.clone();
        for li in from..to {
            cur = self.forward_layer(li, cur, mode)?.0;
        }
        Ok((cur, ()))
    }

    /// Forward pass that records everything backward needs.
    pub fn forward_cached(
        &self,
        input: &Tensor3<F>,
        mode: Mode,
    ) -> Result<(Tensor3<F>, Vec<LayerCache<F>>)> {
        self.check_input(input, 0)?;
        let mut caches = Vec::with_capacity(self.specs.len());
        let mut cur = input.clone();
        for li in 0..self.specs.len() {
            let (next, cache) = self.forward_layer(li, cur, mode)?;
            caches.push(cache.expect("cached forward always yields a cache"));
            cur = next;
        }
        Ok((cur, caches))
    }

    fn forward_layer(
        &self,
        li: usize,
        cur: Tensor3<F>,
        mode: Mode,
    ) -> Result<(Tensor3<F>, Option<LayerCache<F>>)> {
        match self.specs[li] {
            LayerSpec::Conv { activation, .. } => {
                let geom = self.conv_geom(li);
                let lb = self.layer_blobs[li].expect("conv has blobs");
                let kernels = self.blob_slice(&self.blobs[lb.weights]);
                let bias = self.blob_slice(&self.blobs[lb.bias]);
                let pre = conv_forward(&cur, &geom, kernels, bias, Activation::Identity)?;
                let out = if activation == Activation::Identity {
                    pre.clone()
                } else {
                    pre.map(|v| activation.apply(v))
                };
                Ok((out, Some(LayerCache::Conv { input: cur, pre })))
            }
            LayerSpec::MaxPool { window } => {
                let (out, indices) = maxpool(&cur, window)?;
                Ok((out, Some(LayerCache::Pool { indices })))
            }
            LayerSpec::Dense { out, activation } => {
                let in_dim = self.shapes[li].2;
                let lb = self.layer_blobs[li].expect("dense has blobs");
                let weights = self.blob_slice(&self.blobs[lb.weights]);
                let bias = self.blob_slice(&self.blobs[lb.bias]);
                let pre = dense_forward(cur.data(), in_dim, out, weights, bias, Activation::Identity)?;
                let out_vec: Vec<F> = pre.iter().map(|&v| activation.apply(v)).collect();
                let out_t = Tensor3::from_raw(1, 1, out, out_vec);
                Ok((out_t, Some(LayerCache::Dense { input: cur, pre })))
            }
            LayerSpec::Dropout { rate } => match mode {
                Mode::Infer => Ok((
                    cur,
                    Some(LayerCache::Dropout { mask: None, rate }),
                )),
                Mode::Train { dropout_seed } => {
                    let seed = rng::derive(dropout_seed, &[li as u64]);
                    let spec = DropoutSpec::new(rate, seed)?;
                    let (out, mask) = dropout_with_mask(&cur, &spec, true);
                    Ok((out, Some(LayerCache::Dropout { mask, rate })))
                }
            },
            LayerSpec::Flatten => {
                let input = cur.clone();
                Ok((cur.flattened(), Some(LayerCache::Reshape { input })))
            }
            LayerSpec::UpsampleNearest { factor } => {
                let input_shape = cur.shape();
                let out = upsample_nearest(&cur, factor)?;
                Ok((out, Some(LayerCache::Upsample { input_shape, factor })))
            }
        }
    }

    /// Backward pass from the output gradient down to (and including) layer
    /// `stop_layer`, accumulating parameter gradients along the way. Returns
    /// the gradient at layer `stop_layer`'s input.
    pub fn backward(
        &self,
        caches: &[LayerCache<F>],
        output_grad: Tensor3<F>,
        stop_layer: usize,
    ) -> Result<(Vec<F>, Tensor3<F>)> {
        if caches.len() != self.specs.len() {
            return Err(Error::Dimension(
                "cache list does not match the layer stack".into(),
            ));
        }
        let mut param_grads = vec![F::zero(); self.params.len()];
        let mut grad = output_grad;

        for li in (stop_layer..self.specs.len()).rev() {
            grad = match (&self.specs[li], &caches[li]) {
                (LayerSpec::Conv { activation, .. }, LayerCache::Conv { input, pre }) => {
                    let d_pre = chain_activation(&grad, pre, *activation)?;
                    let geom = self.conv_geom(li);
                    let lb = self.layer_blobs[li].expect("conv has blobs");
                    let kernels = self.blob_slice(&self.blobs[lb.weights]);
                    let grads = conv_backward(input, &geom, kernels, &d_pre)?;
                    write_blob(&mut param_grads, &self.blobs[lb.weights], &grads.kernels);
                    write_blob(&mut param_grads, &self.blobs[lb.bias], &grads.bias);
                    grads.input
                }
                (LayerSpec::MaxPool { .. }, LayerCache::Pool { indices }) => {
                    maxpool_grad(indices, &grad)?
                }
                (LayerSpec::Dense { out, activation }, LayerCache::Dense { input, pre }) => {
                    if grad.len() != *out {
                        return Err(Error::Dimension("dense upstream length mismatch".into()));
                    }
                    let d_pre: Vec<F> = grad
                        .data()
                        .iter()
                        .zip(pre)
                        .map(|(&g, &p)| g * activation.derivative(p))
                        .collect();
                    let in_dim = self.shapes[li].2;
                    let lb = self.layer_blobs[li].expect("dense has blobs");
                    let weights = self.blob_slice(&self.blobs[lb.weights]);
                    let grads = dense_backward(input.data(), in_dim, *out, weights, &d_pre)?;
                    write_blob(&mut param_grads, &self.blobs[lb.weights], &grads.weights);
                    write_blob(&mut param_grads, &self.blobs[lb.bias], &grads.bias);
                    Tensor3::from_raw(1, 1, in_dim, grads.input)
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask, rate }) => {
                    dropout_grad(&grad, mask, *rate)
                }
                (LayerSpec::Flatten, LayerCache::Reshape { input }) => {
                    let (h, w, c) = input.shape();
                    Tensor3::from_raw(h, w, c, grad.into_data())
                }
                (
                    LayerSpec::UpsampleNearest { .. },
                    LayerCache::Upsample { input_shape, factor },
                ) => upsample_nearest_grad(*input_shape, *factor, &grad)?,
                _ => {
                    return Err(Error::Dimension(format!(
                        "cache kind does not match layer {li}"
                    )))
                }
            };
        }
        Ok((param_grads, grad))
    }
}

fn chain_activation<F: Real>(
    upstream: &Tensor3<F>,
    pre: &Tensor3<F>,
    activation: Activation,
) -> Result<Tensor3<F>> {
    if upstream.shape() != pre.shape() {
        return Err(Error::Dimension(
            "upstream gradient does not match the activation input".into(),
        ));
    }
    if activation == Activation::Identity {
        return Ok(upstream.clone());
    }
    let mut out = upstream.clone();
    for (g, &p) in out.data_mut().iter_mut().zip(pre.data()) {
        *g = *g * activation.derivative(p);
    }
    Ok(out)
}

fn write_blob<F: Real>(buffer: &mut [F], blob: &ParamBlob, values: &[F]) {
    buffer[blob.offset..blob.offset + blob.len].copy_from_slice(values);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> Network<f64> {
        Network::new(
            (4, 4, 1),
            vec![
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    padding: 1,
                    stride: 1,
                    activation: Activation::Relu,
                },
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out: 3,
                    activation: Activation::Identity,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn shape_chain_is_resolved() {
        let net = tiny_net();
        assert_eq!(net.shape_at(0), (4, 4, 1));
        assert_eq!(net.shape_at(1), (4, 4, 2));
        assert_eq!(net.shape_at(2), (2, 2, 2));
        assert_eq!(net.shape_at(3), (1, 1, 8));
        assert_eq!(net.output_shape(), (1, 1, 3));
        // conv: 2*(1*3*3)+2, dense: 8*3+3
        assert_eq!(net.param_count(), 20 + 27);
    }

    #[test]
    fn dense_before_flatten_is_rejected() {
        let err = Network::<f32>::new(
            (4, 4, 1),
            vec![LayerSpec::Dense {
                out: 2,
                activation: Activation::Identity,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn forward_matches_cached_forward() {
        let mut net = tiny_net();
        let n = net.param_count();
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            *p = ((i * 7919 % 13) as f64 - 6.0) / 10.0;
        }
        assert_eq!(n, net.param_count());
        let input =
            Tensor3::from_vec(4, 4, 1, (0..16).map(|v| (v as f64) / 8.0 - 1.0).collect()).unwrap();
        let fast = net.forward(&input).unwrap();
        let (cached, caches) = net.forward_cached(&input, Mode::Infer).unwrap();
        assert_eq!(fast.data(), cached.data());
        assert_eq!(caches.len(), 4);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = tiny_net();
        let input = Tensor3::<f64>::zeros(5, 5, 1);
        assert!(matches!(
            net.forward(&input).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn train_mode_dropout_is_seed_deterministic() {
        let mut net = Network::<f64>::new(
            (2, 2, 2),
            vec![LayerSpec::Dropout { rate: 0.5 }],
        )
        .unwrap();
        assert_eq!(net.param_count(), 0);
        let input = Tensor3::filled(2, 2, 2, 1.0);
        let mode = Mode::Train { dropout_seed: 99 };
        let (a, _) = net.forward_cached(&input, mode).unwrap();
        let (b, _) = net.forward_cached(&input, mode).unwrap();
        assert_eq!(a.data(), b.data());
        let _ = net.params_mut();
    }
}
