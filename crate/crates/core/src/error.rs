use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // The I/O error is part of the message rather than a source, so chained
    // reports do not print it twice.
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    /// Header does not match the expected dataset schema.
    #[error("{0}")]
    Schema(String),

    /// A value in the data violates its declared domain.
    #[error("{0}")]
    Data(String),

    /// Input outside the mathematical domain of an operation (empty lists, missing classes).
    #[error("{0}")]
    Domain(String),

    /// Caller broke an interface contract, e.g. a feature vector of the wrong length.
    #[error("{0}")]
    Contract(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Training(String),

    #[error("{0}")]
    Stratification(String),

    /// Malformed persisted artifact (model file, index file, matrix file).
    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// Short stable identifier used by the CLI's one-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Schema(_) => "schema",
            Error::Data(_) => "data",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Training(_) => "training",
            Error::Stratification(_) => "stratification",
            Error::Format(_) => "format",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(format!("csv: {e}"))
    }
}
