//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "layer {layer} feeds a residual add; its width is fixed by the skip connection \
         (use prune_residual_block on the block's first or first two layers)"
    )]
    ResidualConstraint { layer: usize },

    #[error("statistics unavailable: {0}")]
    MissingStats(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("gradient check failed: max relative error {max:.3e} exceeds {tolerance:.1e}")]
    GradCheck { max: f64, tolerance: f64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non-finite",
            Error::Graph(_) => "graph",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ResidualConstraint { .. } => "residual-constraint",
            Error::MissingStats(_) => "missing-stats",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::GradCheck { .. } => "gradcheck",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Failures while decoding the binary container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("missing section {0:?}")]
    MissingSection(String),
    #[error("malformed section {section:?}: {reason}")]
    Malformed { section: String, reason: String },
}
