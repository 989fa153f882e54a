use std::path::PathBuf;

use thiserror::Error;

use crate::io::config::ConfigError;
use crate::io::dataset::DatasetError;
use crate::tensor::TensorError;
use crate::training::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training: {0}")]
    Training(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short category, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::InvalidBox(_) => "box",
            Error::InvalidArgument(_) => "argument",
            Error::Checkpoint(_) => "checkpoint",
            Error::Dataset(_) => "dataset",
            Error::Config(_) => "config",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
            Error::Training(_) => "training",
            Error::Evaluation(_) => "evaluation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
