//! Forward and backward passes for convolution, max pooling, ReLU, dense
//! and softmax layers.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu_backward, relu_forward, softmax, softmax_backward};
pub use conv::{conv_output_extent, ConvLayer};
pub use dense::DenseLayer;
pub use pool::{PoolCache, PoolLayer};

use crate::tensor::Tensor;

/// Gradients produced by one layer's backward pass.
///
/// Parameter gradients are `None` for parameter-free layers.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub d_weights: Option<Tensor>,
    pub d_bias: Option<Tensor>,
    pub d_input: Tensor,
}
