use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter is out of range or otherwise unusable.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A config/graph validation failed; `field` names the offending entry.
    #[error("validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// The exact oracle refuses graphs above its state-space cap.
    #[error("graph has {vertices} vertices, exceeding the exact-oracle cap of {cap}")]
    Capacity { vertices: usize, cap: usize },

    /// Rejection sampling did not produce an accepted state.
    #[error(
        "conditioned sampling failed: 0 acceptances in {attempts} attempts \
         (acceptance floor {floor:.1e}, last relaxed density {last_density:.4})"
    )]
    SamplingFailure {
        attempts: u64,
        floor: f64,
        last_density: f64,
    },

    /// Bisection was asked to search a bracket that does not straddle the threshold.
    #[error(
        "invalid bracket: proxy({lo}) = {proxy_lo:.4} and proxy({hi}) = {proxy_hi:.4} \
         do not straddle threshold {threshold}"
    )]
    Bracket {
        lo: f64,
        hi: f64,
        proxy_lo: f64,
        proxy_hi: f64,
        threshold: f64,
    },

    /// Tail fitting needs at least three usable grid points.
    #[error("tail fit failed: {0}")]
    Fit(String),

    /// A coupled run was started from states that violate its ordering precondition.
    #[error("coupling precondition violated: {0}")]
    Coupling(String),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
