use std::path::PathBuf;

/// Errors produced anywhere in the flow-routing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },
    #[error("graph has no edges above threshold {threshold}")]
    EmptyGraph { threshold: f64 },
    #[error("graph is disconnected ({components} components); pass the regularize option to use (L + delta*I)^-1 instead")]
    Disconnected { components: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("source and target coincide (node {0})")]
    DegenerateDemand(usize),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn dim(expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for CLI exit codes and machine-readable reports.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Parse { .. } => ErrorKind::Io,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Usage(_) | Error::Config(_) => ErrorKind::Usage,
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Io,
    Numerical,
    Usage,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
