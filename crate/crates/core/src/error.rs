use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or inconsistent input data.
    #[error("{0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An enumeration would exceed its size guard.
    #[error("guard exceeded: {0}")]
    Guard(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A pipeline stage ran without an artifact it depends on.
    #[error("missing {0}")]
    Missing(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit status for the CLI: 1 usage, 2 data, 3 guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Guard(_) => 3,
            _ => 2,
        }
    }
}
