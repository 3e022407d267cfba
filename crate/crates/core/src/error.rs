use thiserror::Error;

/// Errors raised across the trajectory-field toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter t = {0} outside [0, 1]")]
    Domain(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("rank-deficient normal equations ({0}); use ridge > 0")]
    RankDeficient(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numeric domain error: {0}")]
    Numeric(String),
    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("camera estimation failed: {0}")]
    Camera(String),
}

pub type Result<T> = std::result::Result<T, Error>;
