use thiserror::Error;

/// Errors raised by the model, propagator and analysis layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {constraint}")]
    InvalidParameter {
        name: &'static str,
        constraint: String,
    },

    #[error("numeric failure in {context}: achieved error {achieved:.3e} exceeds tolerance {tolerance:.3e}")]
    NumericFailure {
        context: &'static str,
        achieved: f64,
        tolerance: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, constraint: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            constraint: constraint.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
