//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation is recorded on a [`Tape`]. Backward passes emit their
//! vector-Jacobian products as ordinary tape operations, so a gradient is
//! itself differentiable and derivatives of any order can be taken by
//! calling [`Tape::grad`] again on the result.

mod tape;
mod tensor;

pub use tape::{Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("tensor of shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: range {start}..{end} out of bounds for axis of length {len}")]
    InvalidRange {
        op: &'static str,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("division by exact zero")]
    DivisionByZero,
    #[error("expected a one-element tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("node {0} is not a differentiable leaf")]
    NotDifferentiable(NodeId),
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
