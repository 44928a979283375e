//! Reading and writing graph bundles, the MUSAE raw layout, and the planted
//! synthetic benchmark.

mod bundle_io;
mod musae;
mod synthetic;

pub use bundle_io::{format_float, load_bundle, write_bundle, BundleMeta};
pub use musae::{parse_musae, MusaeOptions};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use std::path::PathBuf;

use thiserror::Error;

use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {what} mismatch: meta.json says {expected}, files contain {found}", path.display())]
    CountMismatch {
        path: PathBuf,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{}: {message}", path.display())]
    Missing { path: PathBuf, message: String },
    #[error("invalid graph: {0}")]
    Graph(#[from] GraphError),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl IngestError {
    fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    fn malformed(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
