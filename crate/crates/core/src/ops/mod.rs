//! Layer-level forward/backward building blocks.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod pool;
pub mod resize;
pub mod upsample;

pub use activation::{argmax, relu, sigmoid, softmax, Activation};
pub use conv::{conv2d, conv2d_grad, ConvGeom, ConvGradients, ConvLayer};
pub use dense::{dense, dense_grad, DenseGradients, DenseLayer};
pub use dropout::{dropout, dropout_grad, dropout_with_mask, DropoutMask, DropoutSpec};
pub use loss::{softmax_ce_from_logits, softmax_ce_grad, sparse_categorical_crossentropy};
pub use pool::{maxpool, maxpool_grad, PoolIndices};
pub use resize::{resize_area, resize_bilinear};
pub use upsample::{upsample_nearest, upsample_nearest_grad};
