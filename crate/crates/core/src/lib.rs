//! A small convolutional-network framework for binary classification of
//! grayscale CT slices: tensors, layers with analytical gradients, the
//! three-conv classifier, SGD-with-momentum training, evaluation metrics,
//! and a PNG/CSV data pipeline with a synthetic dataset generator.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{Network, NetworkConfig};
pub use tensor::{Rng, Shape, Tensor};
