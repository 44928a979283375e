//! The learnable architecture and its objective.

mod eim;
mod forward;
mod losses;
mod params;

pub use eim::{edge_importance_on_tape, estimate_edge_importance, EdgeScores, EimVariant};
pub use forward::{
    branch_and_fuse, branch_and_fuse_on_tape, counterfactual_on_tape, encode, encode_on_tape, forward,
    generate_counterfactual_features, perturb_features, predict, split_features, split_on_tape,
    BranchVars, ForwardOptions, ForwardOutputs, ForwardVars, GraphArrays,
};
pub use losses::{compute_losses, losses_on_tape, LossInputs, LossReport, LossVars, LossWeights};
pub use params::{ModelParams, ParamVars};

use thiserror::Error;

use crate::tensor::TensorError;

/// Negative slope of every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite {term} loss")]
    NonFiniteLoss { term: &'static str },
    #[error("training mask is empty")]
    EmptyMask,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
