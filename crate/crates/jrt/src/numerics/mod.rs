//! Dense-tensor arithmetic with reverse-mode automatic differentiation.

pub mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use gradcheck::{finite_diff_check, BlockAccess, BlockCheck, GradCheckReport};
pub use graph::{Graph, TensorId};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("tensor shape {shape:?} incompatible with data length {data_len}")]
    BadShape { shape: Vec<usize>, data_len: usize },
    #[error("non-finite value detected in {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("graph already consumed by backward")]
    GraphConsumed,
    #[error("backward on an empty graph (no differentiable operations recorded)")]
    EmptyGraph,
}
