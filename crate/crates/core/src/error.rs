use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Missing repository, unresolvable branch, invalid settings.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("git error: {0}")]
    Git(#[from] git2::Error),

    #[error("`{path}` does not exist at revision {commit}")]
    FileNotAtRevision { commit: String, path: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Diff hunks disagree with the file contents they claim to describe.
    #[error("diff/content mismatch for `{path}`: {detail}")]
    Consistency { path: String, detail: String },

    #[error("failed to parse {}: record {record}: {message}", path.display())]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("tracker request failed after {attempts} attempts: {message}")]
    Tracker { attempts: u32, message: String },

    #[error("fixture step {step}: {message}")]
    Fixture { step: usize, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
