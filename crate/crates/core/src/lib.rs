//! Numeric core for a hierarchical biopsy-patch classification pipeline.
//!
//! Everything in this crate is pure computation over in-memory buffers: CNN
//! layers with hand-written forward/backward passes, the Adam optimizer, a
//! finite-difference gradient oracle, 2-means patch filtering on autoencoder
//! codes, stain color math, whole-slide probability aggregation, Grad-CAM
//! heatmaps, confusion-matrix metrics, and a procedural synthetic-slide
//! generator used for end-to-end verification.
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats, the CLI,
//! and parallel orchestration live in the companion `hmic` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod aggregate;
pub mod arch;
pub mod error;
pub mod exec;
pub mod filter;
pub mod gradcam;
pub mod gradcheck;
pub mod kmeans;
pub mod labels;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod real;
pub mod rng;
pub mod stain;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor3;
