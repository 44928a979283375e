//! Structural interventions on graphs: counterfactual neighbourhoods and the
//! group-aware / importance-guided perturbation pipeline.

mod aceg;
mod cng;
mod groups;

pub use aceg::{
    drop_random_edges, mask_budget, mask_by_importance, noise_edge_weights, perturb_group_aware,
    removal_order, PerturbConfig, Retained,
};
pub use cng::{
    build_counterfactual_graph, cosine_similarity, sample_counterfactual_neighbours,
    CandidatePools, CngConfig, NeighbourMap, SamplingStrategy,
};
pub use groups::{detect_groups, label_propagation, GroupAssignment, LPA_MAX_ITERS};

use thiserror::Error;

use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{scores} edge scores for {edges} edges")]
    Misaligned { scores: usize, edges: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
