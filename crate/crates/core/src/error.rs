use std::io;

use thiserror::Error;

/// Shape and graph errors raised by tensor operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("matmul: inner dimensions disagree for {lhs:?} x {rhs:?}")]
    MatmulDims { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} needs a buffer of its element count, got {len}")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("cannot reshape {from:?} into {to:?}: element counts differ")]
    ReshapeCount { from: Vec<usize>, to: Vec<usize> },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("{order:?} is not a permutation of {rank} axes")]
    InvalidPermutation { order: Vec<usize>, rank: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("expected a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,
    #[error("loss is not attached to a recording tape")]
    Detached,
    #[error("operands were recorded on different tapes")]
    TapeMismatch,
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("relation matrix would hold {entries} entries, above the cap of {cap}")]
    MemoryCap { entries: u128, cap: u128 },
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            reason: reason.into(),
        }
        .into()
    }

    /// I/O failures map to exit code 2 in the CLI, everything else to 1.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
