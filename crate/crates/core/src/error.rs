use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: quaternion has zero or non-finite norm")]
    InvalidRotation,

    #[error("invalid scale: components must be finite and strictly positive, got {0:?}")]
    InvalidScale([f64; 3]),

    #[error("gaussian set is not pixel-aligned: expected {expected} primitives, found {found}")]
    NotPixelAligned { expected: usize, found: usize },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("budget {budget} is out of range [0, {max}]")]
    BudgetOutOfRange { budget: i64, max: u64 },

    #[error("scene validation failed: {0}")]
    Validation(String),

    #[error("view {view_id}: {message}")]
    View { view_id: usize, message: String },

    #[error("malformed PLY: {0}")]
    Format(String),

    #[error("unsupported PLY format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True when the error stems from bad user input rather than an internal failure.
    /// A missing or unreadable input file counts as bad input; other I/O
    /// failures do not.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound
                    | std::io::ErrorKind::IsADirectory
                    | std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof
            ),
            _ => true,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
