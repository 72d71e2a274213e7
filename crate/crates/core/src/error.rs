use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("invalid timing configuration: {0}")]
    InvalidTiming(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("trajectory unreachable within budget (n = {n}, delta = {delta})")]
    Unreachable { n: usize, delta: f64 },

    #[error("compression failed for trajectory {index} at delta = {delta}: {source}")]
    CompressFailed {
        index: usize,
        delta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("bad magic bytes in {0}")]
    BadMagic(&'static str),

    #[error("truncated file at record {record}")]
    Truncated { record: usize },

    #[error("dimension inconsistency in record {record}: {detail}")]
    DimensionMismatch { record: usize, detail: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("non-finite loss at batch item {index}")]
    NonFiniteLoss { index: usize },

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("non-finite value during sampling at step {step}")]
    NonFiniteSample { step: usize },

    #[error("non-finite action")]
    NonFiniteAction,

    #[error("infeasible demo: {0}")]
    InfeasibleDemo(String),

    #[error("policy returned {found} actions, expected {expected}")]
    ChunkLength { expected: usize, found: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
