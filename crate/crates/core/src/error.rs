use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("budget error: requested {requested} but only {available} candidates available")]
    Budget { requested: usize, available: usize },

    #[error("input shape error: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::Io => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Io => "io",
        }
    }
}

impl Error {
    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Budget { .. } => ErrorClass::Config,
            Error::Data(_) | Error::Domain(_) | Error::MissingColumn(_) => ErrorClass::Data,
            Error::Shape { .. } | Error::Numeric { .. } => ErrorClass::Numeric,
            Error::Io { .. } => ErrorClass::Io,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}
