use thiserror::Error;

/// Every failure the engine reports.
#[derive(Debug, Error)]
pub enum LerpError {
    /// Tensor shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid hyperparameters or mismatched configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Records or inputs that violate data invariants.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed file contents.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Misuse of an API contract (e.g. backward from a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// Training produced a NaN or infinite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LerpError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        LerpError::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by user input (config, data, parse) rather
    /// than I/O or internal failures.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            LerpError::Config(_)
                | LerpError::Data(_)
                | LerpError::Parse { .. }
                | LerpError::Dimension(_)
                | LerpError::Checkpoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, LerpError>;
