//! From-scratch neural network kernels: tensors, strided convolution,
//! batch normalization, ReLU, inverted dropout, fully connected layers,
//! softmax cross-entropy, and the fixed two-conv classifier built from
//! them. Everything is generic over [`tensor::Scalar`] so the exact same
//! code paths run in f32 for training and in f64 for numeric checks.

pub mod batchnorm;
pub mod conv;
pub mod model;
pub mod ops;
pub mod tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{context}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("input {height}x{width} is smaller than a {kernel}x{kernel} kernel")]
    InputTooSmall {
        height: usize,
        width: usize,
        kernel: usize,
    },
    #[error("batch of {0} is too small to normalize in training mode")]
    DegenerateBatch(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
