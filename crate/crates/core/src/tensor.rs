//! Dense H x W x C tensor, the carrier for images and feature maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major, channel-last volume: `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<F> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<F>,
}

impl<F: Real> Tensor3<F> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            data: vec![F::zero(); height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: F) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Wraps an existing buffer; rejects length mismatches and non-finite
    /// values.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "buffer of {} values cannot be {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value in {height}x{width}x{channels} tensor"
            )));
        }
        Ok(Tensor3 {
            height,
            width,
            channels,
            data,
        })
    }

    /// Internal constructor for hot paths where the buffer is already known
    /// to be the right length and finite.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<F>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Tensor3 {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> F {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: F) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Reinterprets the volume as a flat (1, 1, H*W*C) tensor. The buffer is
    /// already row-major, so this is bookkeeping only.
    pub fn flattened(mut self) -> Tensor3<F> {
        self.channels = self.height * self.width * self.channels;
        self.height = 1;
        self.width = 1;
        self
    }

    pub fn map(&self, mut f: impl FnMut(F) -> F) -> Tensor3<F> {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean over all elements.
    pub fn mean(&self) -> F {
        if self.data.is_empty() {
            return F::zero();
        }
        let mut acc = F::zero();
        for &v in &self.data {
            acc += v;
        }
        acc / F::of(self.data.len() as f64)
    }

    /// Mean of the per-pixel channel averages; for RGB this is the mean of
    /// (R+G+B)/3, the luminance proxy used by the patch filter.
    pub fn mean_luminance(&self) -> f64 {
        self.mean().to_f64_lossy()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise conversion between float widths.
    pub fn cast<G: Real>(&self) -> Tensor3<G> {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| G::of(v.to_f64_lossy()))
                .collect(),
        }
    }
}
