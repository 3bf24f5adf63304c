use std::path::PathBuf;

/// Every failure the library can report.
///
/// Variants map one-to-one onto the process exit codes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("bad format in {file} at byte {offset}: {msg}")]
    Format {
        file: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(file: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used in `ERROR:<category>:` lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Validation(_) | Error::Dimension(_) | Error::Domain(_) => "validation",
            Error::Numeric(_) => "numeric",
        }
    }

    /// 0 success, 1 usage, 2 format/IO, 3 validation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Format { .. } | Error::Io { .. } => 2,
            Error::Validation(_) | Error::Dimension(_) | Error::Domain(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
