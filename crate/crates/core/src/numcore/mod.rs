//! Dense tensors, a reverse-mode autodiff tape and the optimizer machinery
//! used for training.

mod checkpoint;
mod optim;
mod params;
mod tape;
mod tensor;

pub mod gradcheck;

pub use checkpoint::{Checkpoint, Precision};
pub use optim::{
    adadelta_step, clip_gradients, weight_decay, AdadeltaState, ClipState, EpsilonSchedule,
};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{log_softmax_in_place, sigmoid, Reduction, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameter {0} registered twice")]
    DuplicateParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NumError> = std::result::Result<T, E>;
