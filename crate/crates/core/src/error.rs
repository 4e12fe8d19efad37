use thiserror::Error;

/// Errors produced by estimation, depth evaluation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("curves are defined on different grids")]
    IncompatibleCurves,

    #[error("evaluation point {0} lies outside [0, 1]")]
    OutOfDomain(f64),

    #[error("series diverges for decay rate a = {0} (need a > 1)")]
    DivergentSeries(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("no off-diagonal observation pairs available for covariance smoothing")]
    InsufficientPairs,

    #[error("invalid covariance surface: {0}")]
    InvalidSurface(String),

    #[error("curve {0} has no observations")]
    EmptyCurve(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("covariance matrix of subject {0} is not positive definite after ridge escalation")]
    NotPositiveDefinite(String),

    #[error("empty direction set: lambda = {lambda} is below the smallest pool norm {min_norm}")]
    EmptyDirectionSet { lambda: f64, min_norm: f64 },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("model fit failed for group {group}: {source}")]
    GroupFit {
        group: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
