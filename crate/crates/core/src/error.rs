use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid self weight {0}: must lie in (0, 1)")]
    InvalidWeight(f64),

    #[error("graph is disconnected")]
    DisconnectedGraph,

    #[error("mixing matrix has no spectral gap (rho = {rho:e})")]
    NoMixing { rho: f64 },

    #[error("matrix is not doubly stochastic: {kind} residual {value:e} exceeds tolerance")]
    NotDoublyStochastic { kind: &'static str, value: f64 },

    #[error("invalid objective specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },

    #[error("numerical divergence at iteration {t}{}", run.map(|r| format!(" (run {r})")).unwrap_or_default())]
    NumericalDivergence { t: usize, run: Option<usize> },

    #[error("iteration {t} is outside the schedule horizon {horizon}")]
    HorizonExceeded { t: usize, horizon: usize },

    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid run configuration: {0}")]
    InvalidRun(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("trajectory was recorded without debug data")]
    MissingDebugData,

    #[error("check is inapplicable: {0}")]
    Inapplicable(String),

    #[error("nothing to plot")]
    NothingToPlot,

    #[error("config syntax error at line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
