//! Error type shared by every module of the crate.

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Crate-wide error enum.
///
/// The variants map onto the failure classes the pipeline distinguishes:
/// bad caller input, malformed on-disk data, numerical breakdown, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An on-disk artifact (tensor file, manifest, checkpoint) is malformed.
    /// `offset` is the byte position at which parsing failed.
    #[error("{path}: format error at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// An iterative numerical procedure failed (non-convergence, NaN).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An underlying I/O failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A configuration document could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(path: impl AsRef<Path>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
