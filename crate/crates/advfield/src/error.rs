use std::path::PathBuf;

/// Crate-wide error type. Variants map one-to-one onto the CLI exit codes,
/// so keep them coarse: one variant per failure class, details in the text.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("training: {0}")]
    Train(String),

    #[error("model: {0}")]
    Model(String),

    #[error("attack: {0}")]
    Attack(String),

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
