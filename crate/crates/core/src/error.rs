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

    /// A malformed input row. `row` is 1-based and counts data rows only.
    #[error("{file}: row {row}, column `{column}`: {message}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{file}: {message}")]
    Format { file: String, message: String },

    #[error("region nesting broken: {0}")]
    Nesting(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariate `{0}` has zero variance over settled cells")]
    ZeroVariance(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("raster headers differ: {0}")]
    HeaderMismatch(String),

    #[error("covariate mismatch: {0}")]
    CovariateMismatch(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
