//! Error type shared by every tensor-engine entry point.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    BadShape { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{op}: row {row} has no unmasked entries")]
    DegenerateRow { op: &'static str, row: usize },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("node {id} is not on this tape")]
    UnknownNode { id: usize },

    #[error("parameter {name:?} already registered")]
    DuplicateParam { name: String },

    #[error("gradient for parameter {name:?} is not finite")]
    NonFiniteGrad { name: String },

    #[error("checkpoint: {detail}")]
    Checkpoint { detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
