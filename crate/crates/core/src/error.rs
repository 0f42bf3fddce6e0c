use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence of length {len} is shorter than kernel width {kernel}")]
    SequenceTooShort { len: usize, kernel: usize },

    #[error("pooling over zero valid rows")]
    EmptyPool,

    #[error("product has no gold labels")]
    EmptyGoldSet,

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{file}:{line}: product {product_id} references unknown label {label_id} (schema has {n_labels})")]
    UnknownLabel {
        file: String,
        line: usize,
        product_id: u64,
        label_id: usize,
        n_labels: usize,
    },

    #[error("unknown attribute id {0}")]
    UnknownAttribute(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}

/// Failures specific to reading a checkpoint file. Each condition is a
/// distinct variant so callers can tell a stale file from a damaged one.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("schema fingerprint mismatch: checkpoint {checkpoint}, dataset {dataset}")]
    FingerprintMismatch { checkpoint: String, dataset: String },

    #[error("checkpoint truncated while reading {what}: needed {needed} bytes, {available} available")]
    Truncated {
        what: String,
        needed: u64,
        available: u64,
    },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
