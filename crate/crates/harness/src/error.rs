use gres_core::GresError;
use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite loss or parameters; training aborts instead of skipping.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] GresError),
}

impl HarnessError {
    /// Process exit code: 2 for bad input or configuration, 3 for numerical
    /// failure, 1 for internal errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Core(e) => match e {
                GresError::Input(_)
                | GresError::Compatibility(_)
                | GresError::Format { .. }
                | GresError::Io { .. }
                | GresError::UndefinedMetric(_) => 2,
                GresError::Dimension { .. } | GresError::Contract(_) => 1,
            },
        }
    }
}
