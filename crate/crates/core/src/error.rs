use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pipeline stages and the evaluation engine.
///
/// Stage variants carry enough context (backend, record) for the CLI to print
/// a stage-qualified message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion: {0}")]
    Ingestion(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("detection [{backend}]: {message}")]
    Detection { backend: String, message: String },

    #[error("masking: {0}")]
    Masking(String),

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("restoration: {0}")]
    Restoration(String),

    #[error("embedding [{record}]: {message}")]
    Embedding { record: String, message: String },

    #[error("side split [{record}]: {message}")]
    SideSplit { record: String, message: String },

    #[error("scoring: {0}")]
    Scoring(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("classification: {0}")]
    Classification(String),

    #[error("comparison: {0}")]
    Comparison(String),

    #[error("stage {stage} failed on record {record}: {source}")]
    Stage {
        stage: String,
        record: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// Wraps an error with the stage and record it occurred in.
    pub fn in_stage(self, stage: &str, record: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            record: record.to_string(),
            source: Box::new(self),
        }
    }
}
