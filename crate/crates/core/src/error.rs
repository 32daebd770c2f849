use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants fall into the classes the CLI maps to exit codes:
/// configuration problems, misuse of an API, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("Neumann series diverged after {step} steps (|p| grew by {growth:.3e}); use a smaller beta (need beta < 2 / lambda_max)")]
    Divergent { step: usize, growth: f64 },

    #[error("ROC-AUC undefined: {0}")]
    UndefinedMetric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than by the caller.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Divergent { .. })
    }

    /// True for configuration and shape errors.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Shape { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
