use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad STF magic {found:?} (expected \"MDK1\")")]
    BadMagic { found: [u8; 4] },

    #[error("truncated STF payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("trailing bytes after STF payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: u64, found: u64 },

    #[error("STF extents overflow addressable size: {dims:?}")]
    ExtentOverflow { dims: Vec<u64> },

    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: &'static str },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate eigenproblem: {0}")]
    DegenerateEigen(String),

    #[error("insufficient snapshots: have {have}, need more than {need}")]
    InsufficientSnapshots { have: usize, need: usize },

    #[error("sequence too short for HODMD: {have} valid frames, minimum {min}")]
    BelowMinSnapshots { have: usize, min: usize },

    #[error("missing sample kind {kind} for sequence {sequence_id}")]
    MissingKind { kind: String, sequence_id: String },

    #[error("class {class} has {have} sequences, at least {need} required")]
    TooFewSequences { class: usize, have: usize, need: usize },

    #[error("temperature must be positive, found {0}")]
    NonPositiveTemperature(f64),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("empty score list")]
    EmptyScores,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
