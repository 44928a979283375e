//! Dense matrices, a reverse-mode tape over them, Adam, and the parameter
//! checkpoint format.

mod adam;
pub mod checkpoint;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use tape::{segment_softmax_values, Tape, Var, STANDARDIZE_EPS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("loss must be a scalar, got a {rows}x{cols} value")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardTwice,
    #[error("{0}")]
    InvalidArgument(String),
}
