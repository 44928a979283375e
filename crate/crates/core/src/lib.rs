//! Causal neighbourhood learning for node classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: immutable graphs and adjacency queries
//! * [`tensor`]: dense matrices, a reverse-mode tape and Adam
//! * [`ingest`]: bundle files, the MUSAE layout and the synthetic benchmark
//! * [`intervention`]: counterfactual neighbourhoods and edge perturbation
//! * [`model`]: encoder, edge importance, gated branches and losses
//! * [`train`]: the training loop, cross-validation and experiment protocols

pub mod graph;
pub mod ingest;
pub mod intervention;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use graph::{build_bundle, GraphBundle, GraphError};
pub use model::{EdgeScores, ModelParams};
pub use rng::Rng;
pub use train::{MetricReport, RunConfig};
