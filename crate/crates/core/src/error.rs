use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's precondition (shape mismatch, bad column 0, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range (limit {limit}) for {what}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// Normal equations could not be solved.
    #[error("solver error: {0}")]
    Solver(String),

    /// An estimator could not be applied to the data it was given.
    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("division error: {0}")]
    Division(String),

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}
