use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// Variants fall into two families that the CLI maps onto exit codes:
/// input problems (bad files, shapes, unpaired data) and domain problems
/// (parameters outside their physical range, ill-posed decompositions).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("transmission {min_t:.3e} below floor {t_min:.1e} at {count} pixel(s)")]
    LowTransmission { min_t: f64, t_min: f64, count: usize },

    #[error("degenerate decomposition: {0}")]
    Degenerate(String),

    #[error("unpaired inputs: {}", .0.join(", "))]
    Unpaired(Vec<String>),

    #[error("singular least-squares fit: {0}")]
    SingularFit(String),

    #[error("no valid pixels for evaluation")]
    NoValidPixels,

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by malformed or missing inputs rather than
    /// by values outside a mathematical domain.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Shape { .. }
                | Error::Unpaired(_)
                | Error::Format { .. }
                | Error::Io { .. }
        )
    }

    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
