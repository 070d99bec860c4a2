use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss not evaluable (non-finite value at coordinate {index})")]
    LossNotEvaluable { index: usize },

    #[error("stochastic forward; use inference mode")]
    StochasticForward,

    #[error("graph error: {0}")]
    Graph(String),

    #[error("{stage} diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("context overflow: sequence of {len} tokens exceeds maximum context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("frozen parameter modified: {0}")]
    FrozenParameterModified(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("text generation backend failed{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },

    #[error("scorer error: {0}")]
    Scorer(String),

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyInput
            | Error::InvalidArgument(_)
            | Error::StochasticForward
            | Error::Template(_)
            | Error::Config(_) => ErrorKind::Usage,
            Error::LossNotEvaluable { .. }
            | Error::Divergence { .. }
            | Error::FrozenParameterModified(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
