use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid uncertainty mapping: {0}")]
    InvalidMapping(String),

    #[error("tangent basis undefined at the origin of the uncertainty space")]
    DegenerateOrigin,

    #[error("stiffness matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("integration exceeded {max_steps} steps at t = {t}")]
    StepLimit { t: f64, max_steps: usize },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("integration step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("invalid integration request: {0}")]
    InvalidIntegration(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Newton matrix ({0})")]
    Singular(String),

    #[error("near-bifurcation sensitivity failure: condition estimate {condition:e}")]
    IllConditioned { condition: f64 },

    #[error("metric locally insensitive to uncertainty (|grad| = {0:e})")]
    InsensitiveMetric(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("empty branch")]
    EmptyBranch,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from the configuration rather than the
    /// numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::UnknownParameter(_)
                | Error::InvalidModel(_)
                | Error::InvalidMapping(_)
                | Error::Config(_)
                | Error::Parse(_)
                | Error::Json(_)
        )
    }
}
