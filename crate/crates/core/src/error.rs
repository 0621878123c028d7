use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GresError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GresError {
    /// Operand shapes do not fit the operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed user input (expressions, images, masks, grid sizes).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Checkpoint / vocabulary files that do not fit together.
    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GresError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        GresError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GresError::Io {
            path: path.into(),
            source,
        }
    }
}
