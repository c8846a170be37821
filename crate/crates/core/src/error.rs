use std::path::PathBuf;

/// Crate-wide error type. Variants map onto CLI exit codes: configuration
/// errors are usage errors (2), data/io errors are data errors (3), and
/// numerical or shape errors are runtime errors (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("shape: {0}")]
    Shape(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numerical(_) | Error::Shape(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
