use std::io;

/// Errors raised anywhere in the crate.
///
/// The variants map onto the CLI exit codes: configuration and argument
/// problems exit with 2, privacy-gate refusals with 3 and everything else
/// with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parameter outside model domain: {0}")]
    Domain(String),

    /// A private run was refused because its privacy precondition fails.
    #[error("privacy gate refused run: {0}")]
    PrivacyGate(String),

    #[error("sampler error at iteration {iteration}: {message} (state: {state:?})")]
    Sampler {
        iteration: usize,
        message: String,
        state: Vec<f64>,
    },

    #[error("optimizer failed to converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Optimizer { iterations: usize, grad_norm: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Process exit code associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Precondition(_) => 2,
            Error::PrivacyGate(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
