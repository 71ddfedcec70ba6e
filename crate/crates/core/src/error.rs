use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: unknown {kind} label `{label}`; known labels: [{known}]")]
    UnknownLabel {
        line: usize,
        kind: &'static str,
        label: String,
        known: String,
    },
    #[error("embedding file: {0}")]
    EmbeddingFormat(String),
    #[error("empty dataset after filtering: {0}")]
    EmptyAfterFilter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("memory not initialized: {0}")]
    Memory(String),
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
    #[error("vocab mismatch: checkpoint {expected}, dataset {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(line: usize, field: &str, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
