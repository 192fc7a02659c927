use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("unknown entity '{0}'")]
    UnknownEntity(String),

    #[error("unknown relation '{0}'")]
    UnknownRelation(String),

    #[error("relation {0} has no example facts")]
    NoExamples(u32),

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("prompt cache error: {0}")]
    PromptCache(String),

    #[error("incompatible model: {0}")]
    Incompatible(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} ({dataset})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
        dataset: String,
    },

    #[error("target entity {0} is in the filter set")]
    TargetFiltered(u32),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. } => "malformed_line",
            Error::UnknownEntity(_) => "unknown_entity",
            Error::UnknownRelation(_) => "unknown_relation",
            Error::NoExamples(_) => "no_examples",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Tensor(_) => "tensor",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::PromptCache(_) => "prompt_cache",
            Error::Incompatible(_) => "incompatible",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::TargetFiltered(_) => "target_filtered",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
