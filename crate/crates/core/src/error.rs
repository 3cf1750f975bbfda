use thiserror::Error;

use crate::optim::Strategy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("divergence in round {round} ({strategy}): {detail}")]
    Diverged {
        round: usize,
        strategy: Strategy,
        detail: String,
    },

    #[error("timestamps must be strictly increasing (sample {index})")]
    NonMonotoneTrace { index: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("invalid config:\n{}", .0.join("\n"))]
    ConfigInvalid(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
