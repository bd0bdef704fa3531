use std::path::PathBuf;

use thiserror::Error;

use crate::validate::Violation;

/// Errors raised by the planning library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed workflow or pool input.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An argument outside the domain of the operation.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("no profile for node {node}, model {model}")]
    MissingProfile { node: usize, model: usize },

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(&'static str),

    #[error("instance too large for exact evaluation: {0}")]
    SizeGuard(String),

    #[error("invalid instance ({} violation(s)): {}", .0.len(), first_violation(.0))]
    Invalid(Vec<Violation>),
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|x| x.to_string()).unwrap_or_default()
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
