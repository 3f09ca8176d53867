use std::io;

use crate::node::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input is empty")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("entry {0} already present in shard")]
    DuplicateId(u64),

    #[error("entry {0} not found")]
    NotFound(u64),

    #[error("shard is empty")]
    EmptyShard,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("node representation is degenerate (norm below 1e-12)")]
    DegenerateRepresentation,

    #[error("no nodes available for scheduling")]
    NoNodesAvailable,

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("prompt is empty")]
    EmptyPrompt,

    #[error("generation backend failed during {context}: {message}")]
    Backend { context: String, message: String },

    #[error("embedding backend failed: {0}")]
    Embedder(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: arrival time decreases ({previous} -> {current})")]
    NonMonotonicArrivals { line: usize, previous: f64, current: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl std::fmt::Display) -> Self {
        Error::Config(format!("{field}: {message}"))
    }
}
