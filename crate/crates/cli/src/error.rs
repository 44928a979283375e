use std::io;
use std::path::PathBuf;

use cnl_core::ingest::IngestError;
use cnl_core::model::ModelError;
use cnl_core::train::{ConfigError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("output {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    /// Process exit status: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Train(TrainError::Config(_)) => 1,
            Self::Train(e) if e.is_numeric() => 3,
            Self::Model(ModelError::NonFiniteLoss { .. }) => 3,
            Self::Ingest(_) | Self::Train(_) | Self::Model(_) | Self::Output { .. } => 2,
        }
    }
}
