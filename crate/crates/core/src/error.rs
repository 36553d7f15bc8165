use thiserror::Error;

pub type Result<T, E = SpdeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SpdeError {
    #[error("field contains non-finite values ({count} nodes), first at index {first}")]
    NonFinite { count: usize, first: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time interval [{start}, {end}] does not intersect the trajectory span [{t0}, {t1}]")]
    EmptyInterval { start: f64, end: f64, t0: f64, t1: f64 },

    #[error("trajectory span [{t0}, {t1}] does not cover the required window [{need0}, {need1}]")]
    SpanTooShort { t0: f64, t1: f64, need0: f64, need1: f64 },

    #[error("noise mode {mode} out of range 1..={modes}")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("time resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("unsupported dimension n = {0}: {1}")]
    UnsupportedDimension(usize, String),

    #[error("level energy increased from zero at k = {k}, a = {a}: monotonicity violated")]
    MonotonicityViolation { k: usize, a: f64 },

    #[error("input not normalized: {0}")]
    NotNormalized(String),

    #[error("too few scales for a regression: {available} available, {required} required")]
    TooFewScales { available: usize, required: usize },

    #[error("invalid snapshot data: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("no results in {0}")]
    NoResults(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
