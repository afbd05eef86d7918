use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("batch size error: {0}")]
    BatchSize(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("model build error: {0}")]
    Build(String),

    #[error("dataset consistency error: {0}")]
    DatasetConsistency(String),

    #[error("low-confidence signal match: correlation peak {peak:.3} below {threshold}")]
    LowConfidence { peak: f64, threshold: f64 },

    #[error("degenerate motion: no frame pair passes the translation thresholds")]
    DegenerateMotion,

    #[error("format error: {0}")]
    Format(String),

    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
