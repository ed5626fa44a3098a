//! Non-overlapping max pooling with winner bookkeeping for backprop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor3;

/// Winner positions from a pooling pass. Indices point into the input
/// buffer, one per output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: (usize, usize, usize),
    pub window: usize,
    pub winners: Vec<usize>,
}

/// Window maximum over each non-overlapping `window x window` block
/// (stride == window). Ties go to the smallest linear index.
pub fn maxpool<F: Real>(input: &Tensor3<F>, window: usize) -> Result<(Tensor3<F>, PoolIndices)> {
    let (h, w, c) = input.shape();
    if window == 0 {
        return Err(Error::Argument("pool window must be positive".into()));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::Dimension(format!(
            "input {h}x{w} not divisible by pool window {window}"
        )));
    }
    let (out_h, out_w) = (h / window, w / window);
    let data = input.data();
    let mut out = Tensor3::zeros(out_h, out_w, c);
    let mut winners = vec![0usize; out_h * out_w * c];

    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut best_idx = ((oy * window) * w + ox * window) * c + ch;
                let mut best = data[best_idx];
                for wy in 0..window {
                    let y = oy * window + wy;
                    for wx in 0..window {
                        let x = ox * window + wx;
                        let idx = (y * w + x) * c + ch;
                        // strict '>' keeps the smallest index on ties
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * out_w + ox) * c + ch;
                out.data_mut()[o] = best;
                winners[o] = best_idx;
            }
        }
    }

    Ok((
        out,
        PoolIndices {
            input_shape: (h, w, c),
            window,
            winners,
        },
    ))
}

/// Routes upstream gradients back to the winner positions; everything else
/// stays zero.
pub fn maxpool_grad<F: Real>(indices: &PoolIndices, upstream: &Tensor3<F>) -> Result<Tensor3<F>> {
    let (h, w, c) = indices.input_shape;
    let expected = (h / indices.window, w / indices.window, c);
    if upstream.shape() != expected {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match pool output {:?}",
            upstream.shape(),
            expected
        )));
    }
    let mut grad = Tensor3::zeros(h, w, c);
    for (&winner, &u) in indices.winners.iter().zip(upstream.data()) {
        if winner >= grad.len() {
            return Err(Error::Dimension("stale pool indices".into()));
        }
        grad.data_mut()[winner] += u;
    }
    Ok(grad)
}
