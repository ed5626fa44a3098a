//! 2-D convolution (cross-correlation) with hand-written backward pass.
//!
//! Each output channel is the sum over input channels of the input
//! cross-correlated with its kernel, plus a per-channel bias, followed by an
//! elementwise activation. Gradients are for the linear stage; callers chain
//! the activation derivative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::activation::Activation;
use crate::real::Real;
use crate::tensor::Tensor3;

/// Kernel geometry, independent of where the weights live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Output spatial dims: (H + 2*padding - k) / stride + 1 per axis.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        if k == 0 || k % 2 == 0 {
            return Err(Error::Argument(format!("kernel size {k} must be odd")));
        }
        if self.stride == 0 {
            return Err(Error::Argument("stride must be positive".into()));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(Error::Dimension(format!(
                "kernel {k} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    /// Flat index into a `[out][in][ky][kx]` weight buffer.
    #[inline]
    pub fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }
}

/// Owned convolution layer: kernels laid out `[out][in][ky][kx]` plus one
/// bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F> {
    pub geom: ConvGeom,
    pub kernels: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> ConvLayer<F> {
    pub fn new(geom: ConvGeom, kernels: Vec<F>, bias: Vec<F>) -> Result<Self> {
        if kernels.len() != geom.weight_len() || bias.len() != geom.out_channels {
            return Err(Error::Dimension(format!(
                "conv weights {} / bias {} do not match geometry {:?}",
                kernels.len(),
                bias.len(),
                geom
            )));
        }
        Ok(ConvLayer {
            geom,
            kernels,
            bias,
        })
    }

    pub fn zeros(geom: ConvGeom) -> Self {
        ConvLayer {
            kernels: vec![F::zero(); geom.weight_len()],
            bias: vec![F::zero(); geom.out_channels],
            geom,
        }
    }
}

/// Gradients of the linear convolution stage.
#[derive(Debug)]
pub struct ConvGradients<F> {
    pub input: Tensor3<F>,
    /// Same `[out][in][ky][kx]` layout as the kernels.
    pub kernels: Vec<F>,
    pub bias: Vec<F>,
}

fn check_input<F: Real>(input: &Tensor3<F>, geom: &ConvGeom, kernels: &[F]) -> Result<()> {
    if input.channels() != geom.in_channels {
        return Err(Error::Dimension(format!(
            "input has {} channels, layer expects {}",
            input.channels(),
            geom.in_channels
        )));
    }
    if !kernels.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite convolution weight".into()));
    }
    Ok(())
}

/// Repacks `[oc][ic][ky][kx]` weights to `[ky][kx][ic][oc]` so the innermost
/// accumulation loop runs over contiguous memory.
fn repack<F: Real>(geom: &ConvGeom, kernels: &[F]) -> Vec<F> {
    let (k, cin, cout) = (geom.kernel, geom.in_channels, geom.out_channels);
    let mut packed = vec![F::zero(); kernels.len()];
    for oc in 0..cout {
        for ic in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    packed[((ky * k + kx) * cin + ic) * cout + oc] =
                        kernels[geom.weight_index(oc, ic, ky, kx)];
                }
            }
        }
    }
    packed
}

/// Forward convolution over weight slices; out-of-bounds taps are zero
/// padding.
pub fn conv_forward<F: Real>(
    input: &Tensor3<F>,
    geom: &ConvGeom,
    kernels: &[F],
    bias: &[F],
    activation: Activation,
) -> Result<Tensor3<F>> {
    check_input(input, geom, kernels)?;
    let (h, w, cin) = input.shape();
    let (out_h, out_w) = geom.output_dims(h, w)?;
    let (k, cout, pad, stride) = (geom.kernel, geom.out_channels, geom.padding, geom.stride);
    let packed = repack(geom, kernels);
    let data = input.data();

    let mut out = Tensor3::zeros(out_h, out_w, cout);
    let mut acc = vec![F::zero(); cout];
    for oy in 0..out_h {
        for ox in 0..out_w {
            acc.copy_from_slice(bias);
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_off = (iy as usize * w + ix as usize) * cin;
                    for ic in 0..cin {
                        let v = data[in_off + ic];
                        let w_off = ((ky * k + kx) * cin + ic) * cout;
                        let row = &packed[w_off..w_off + cout];
                        for (a, &wt) in acc.iter_mut().zip(row) {
                            *a += v * wt;
                        }
                    }
                }
            }
            let out_off = (oy * out_w + ox) * cout;
            let slot = &mut out.data_mut()[out_off..out_off + cout];
            for (s, &a) in slot.iter_mut().zip(&acc) {
                *s = activation.apply(a);
            }
        }
    }
    Ok(out)
}

/// Backward pass of the linear stage: gradients w.r.t. input, kernels, and
/// bias given the upstream gradient at the (pre-activation) output.
pub fn conv_backward<F: Real>(
    input: &Tensor3<F>,
    geom: &ConvGeom,
    kernels: &[F],
    upstream: &Tensor3<F>,
) -> Result<ConvGradients<F>> {
    check_input(input, geom, kernels)?;
    let (h, w, cin) = input.shape();
    let (out_h, out_w) = geom.output_dims(h, w)?;
    if upstream.shape() != (out_h, out_w, geom.out_channels) {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match conv output ({out_h}, {out_w}, {})",
            upstream.shape(),
            geom.out_channels
        )));
    }
    let (k, cout, pad, stride) = (geom.kernel, geom.out_channels, geom.padding, geom.stride);
    let packed = repack(geom, kernels);
    let data = input.data();
    let up = upstream.data();

    let mut grad_input = Tensor3::zeros(h, w, cin);
    let mut grad_packed = vec![F::zero(); kernels.len()];
    let mut grad_bias = vec![F::zero(); cout];

    for oy in 0..out_h {
        for ox in 0..out_w {
            let up_off = (oy * out_w + ox) * cout;
            let urow = &up[up_off..up_off + cout];
            for (gb, &u) in grad_bias.iter_mut().zip(urow) {
                *gb += u;
            }
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_off = (iy as usize * w + ix as usize) * cin;
                    for ic in 0..cin {
                        let v = data[in_off + ic];
                        let w_off = ((ky * k + kx) * cin + ic) * cout;
                        let wrow = &packed[w_off..w_off + cout];
                        let grow = &mut grad_packed[w_off..w_off + cout];
                        let mut gi = F::zero();
                        for oc in 0..cout {
                            let u = urow[oc];
                            grow[oc] += v * u;
                            gi += wrow[oc] * u;
                        }
                        grad_input.data_mut()[in_off + ic] += gi;
                    }
                }
            }
        }
    }

    // unpack [ky][kx][ic][oc] back to the layer's [oc][ic][ky][kx] layout
    let mut grad_kernels = vec![F::zero(); kernels.len()];
    for oc in 0..cout {
        for ic in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    grad_kernels[geom.weight_index(oc, ic, ky, kx)] =
                        grad_packed[((ky * k + kx) * cin + ic) * cout + oc];
                }
            }
        }
    }

    Ok(ConvGradients {
        input: grad_input,
        kernels: grad_kernels,
        bias: grad_bias,
    })
}

/// Convolve with an owned layer.
pub fn conv2d<F: Real>(
    input: &Tensor3<F>,
    layer: &ConvLayer<F>,
    activation: Activation,
) -> Result<Tensor3<F>> {
    conv_forward(input, &layer.geom, &layer.kernels, &layer.bias, activation)
}

/// Linear-stage gradients for an owned layer.
pub fn conv2d_grad<F: Real>(
    input: &Tensor3<F>,
    layer: &ConvLayer<F>,
    upstream: &Tensor3<F>,
) -> Result<ConvGradients<F>> {
    conv_backward(input, &layer.geom, &layer.kernels, upstream)
}
