use thiserror::Error;

/// Errors raised by the precoder design library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A joint alphabet or similar enumeration exceeded its configured cap.
    #[error("resource limit exceeded: {what} has size {size}, cap is {cap}")]
    ResourceLimit { what: String, size: u128, cap: u128 },

    #[error("fixed point did not converge ({context}); best residual {best_residual:e}")]
    Convergence { context: String, best_residual: f64 },

    #[error("numerical rank deficiency: {0}")]
    NumericalRank(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Adds call-site context to convergence failures; other variants pass through.
    pub fn with_context(self, ctx: impl AsRef<str>) -> Self {
        match self {
            Error::Convergence {
                context,
                best_residual,
            } => Error::Convergence {
                context: format!("{}: {}", ctx.as_ref(), context),
                best_residual,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
