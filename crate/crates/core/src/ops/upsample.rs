//! Nearest-neighbor upsampling for the autoencoder decoder.

use alloc::format;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor3;

/// Each input cell is replicated into a `factor x factor` block.
pub fn upsample_nearest<F: Real>(input: &Tensor3<F>, factor: usize) -> Result<Tensor3<F>> {
    if factor == 0 {
        return Err(Error::Argument("upsample factor must be positive".into()));
    }
    let (h, w, c) = input.shape();
    let mut out = Tensor3::zeros(h * factor, w * factor, c);
    for y in 0..h * factor {
        let sy = y / factor;
        for x in 0..w * factor {
            let sx = x / factor;
            let src = (sy * w + sx) * c;
            let dst = (y * w * factor + x) * c;
            out.data_mut()[dst..dst + c].copy_from_slice(&input.data()[src..src + c]);
        }
    }
    Ok(out)
}

/// Backward of nearest-neighbor upsampling: each source cell collects the
/// gradient of its whole block.
pub fn upsample_nearest_grad<F: Real>(
    input_shape: (usize, usize, usize),
    factor: usize,
    upstream: &Tensor3<F>,
) -> Result<Tensor3<F>> {
    let (h, w, c) = input_shape;
    if upstream.shape() != (h * factor, w * factor, c) {
        return Err(Error::Dimension(format!(
            "upstream {:?} does not match upsampled {:?} by {factor}",
            upstream.shape(),
            input_shape
        )));
    }
    let mut grad = Tensor3::zeros(h, w, c);
    let up_w = w * factor;
    for y in 0..h * factor {
        let sy = y / factor;
        for x in 0..up_w {
            let sx = x / factor;
            let src = (sy * w + sx) * c;
            let dst = (y * up_w + x) * c;
            for ch in 0..c {
                grad.data_mut()[src + ch] += upstream.data()[dst + ch];
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_replicate_the_source() {
        let input = Tensor3::from_vec(1, 2, 1, alloc::vec![1.0f64, 2.0]).unwrap();
        let out = upsample_nearest(&input, 2).unwrap();
        assert_eq!(out.shape(), (2, 4, 1));
        assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn grad_sums_each_block() {
        let upstream = Tensor3::filled(2, 4, 1, 1.0f64);
        let grad = upsample_nearest_grad((1, 2, 1), 2, &upstream).unwrap();
        assert_eq!(grad.data(), &[4.0, 4.0]);
    }
}
