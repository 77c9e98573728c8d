use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent buffer sizes or non-finite data inside a value.
    #[error("malformed input: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Validation(String),

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("degenerate corners: {0}")]
    DegenerateCorners(String),

    #[error("base edges are {angle_deg:.2} degrees apart, outside 90 +/- {tolerance_deg} degrees")]
    NotOrthogonal { angle_deg: f64, tolerance_deg: f64 },

    #[error("no point found above the base plane inside the base rectangle")]
    EmptyObject,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
