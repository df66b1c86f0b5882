use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient: smallest singular value {smallest:e} vs largest {largest:e}")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("step index {index} outside 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("degenerate variance at step {t}: 1 - alpha_bar_t = 0")]
    DegenerateVariance { t: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid mask: lambda_max = {lambda_max} (must be < 1)")]
    InvalidMask { lambda_max: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("training diverged at iteration {iteration}: loss {loss:e}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("invalid contraction rate {value} (must lie in (0, 1))")]
    InvalidRate { value: f64 },

    #[error("map is not contractive: norm {norm} >= 1")]
    NotContractive { norm: f64 },

    #[error("rate fit needs at least 3 usable points, got {n}")]
    TooFewPoints { n: usize },

    #[error("error sequence entry {index} is not positive ({value})")]
    NonPositiveError { index: usize, value: f64 },

    #[error("sample {index} is off the manifold (residual {residual:e})")]
    OffManifold { index: usize, residual: f64 },

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
