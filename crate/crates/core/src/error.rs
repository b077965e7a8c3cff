use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("channel {channel} ({continuum}) would have width {width} at step {step}")]
    ChannelCollapsed {
        channel: usize,
        continuum: &'static str,
        step: usize,
        width: i64,
    },

    #[error("active set is empty{context}")]
    EmptyActiveSet { context: String },

    #[error("matrix is not positive definite (row {row}, pivot {pivot:e})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("constraint rows are linearly dependent: {rows:?}")]
    RankDeficient { rows: Vec<usize> },

    #[error("linear solver failed to converge{context}: residual {residual:e}")]
    SolverFailure { residual: f64, context: String },

    #[error("no constraint rows for block {block} at level {level}")]
    NoConstraints { block: usize, level: usize },

    #[error("missing basis for block {block} at level {level}")]
    MissingBasis { block: usize, level: usize },

    #[error("{0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a location string to solver errors; other variants pass through.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::SolverFailure { residual, context } => Error::SolverFailure {
                residual,
                context: format!("{context} {}", ctx.into()),
            },
            Error::EmptyActiveSet { context } => Error::EmptyActiveSet {
                context: format!("{context} {}", ctx.into()),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
