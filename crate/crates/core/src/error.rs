//! Crate-wide error type.

use std::path::PathBuf;

use crate::steering::SteerTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid generation failed after {attempts} attempts ({rows}x{cols}, density {density})")]
    GenerationFailed {
        attempts: usize,
        rows: usize,
        cols: usize,
        density: f64,
    },

    #[error("no path from start to goal")]
    NoPath,

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown token span {span:?} at byte {offset}")]
    Tokenize { offset: usize, span: String },

    #[error("search budget exceeded: {0}")]
    Budget(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("steering diverged at step {step}")]
    SteerDivergence { step: usize, trace: Box<SteerTrace> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error("artifact version mismatch: expected {expected:?}, found {found:?}")]
    Version { expected: String, found: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Short machine-readable tag, used by the command line on failure.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Shape(_) => "shape",
            Error::GenerationFailed { .. } => "generation-failure",
            Error::NoPath => "no-path",
            Error::Parse { .. } => "parse",
            Error::Tokenize { .. } => "tokenize",
            Error::Budget(_) => "budget",
            Error::Divergence(_) => "divergence",
            Error::SteerDivergence { .. } => "steer-divergence",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::MissingFile(_) => "missing-file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
