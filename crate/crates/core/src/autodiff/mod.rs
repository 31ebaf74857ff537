//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every primitive as it is evaluated; [`Graph::backward`]
//! then walks the tape in reverse from a scalar root. Graphs are cheap to build
//! and are rebuilt for every training step, so the graph shape may change from
//! one step to the next.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{grad_check, GRAD_CHECK_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use kernels::{sigmoid, softmax_row, softplus};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}
