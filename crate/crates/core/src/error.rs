use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("validation error: {0}")]
    Validation(String),

    /// A function was evaluated outside the set where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced a non-finite or non-positive value where one
    /// was required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Every optimizer start failed.
    #[error("fit failed: {message}")]
    Fit {
        message: String,
        diagnostics: Vec<String>,
    },

    /// The sampler exceeded its event cap while the branching diagnostic
    /// reported an explosive regime.
    #[error("supercritical regime: n* = {n_star:.4}, aborted after {accepted} accepted events")]
    Supercritical { n_star: f64, accepted: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Io(_) | Error::Json(_))
    }
}
