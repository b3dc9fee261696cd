use thiserror::Error;

pub type Result<T> = std::result::Result<T, NlgsError>;

#[derive(Debug, Error)]
pub enum NlgsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field lives on a different grid than the operator or partner field")]
    GridMismatch,

    #[error("non-finite value in {context} at index {index}")]
    NonFiniteValue { context: &'static str, index: usize },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error(
        "kernel support {support} is below 4 grid spacings ({spacing}); \
         need at least {required_counts:?} cells per axis for this scale"
    )]
    ResolutionGuard {
        support: f64,
        spacing: f64,
        required_counts: Vec<usize>,
    },

    #[error("time step {dt} exceeds the stability bound {max_dt}")]
    StabilityBound { dt: f64, max_dt: f64 },

    #[error(
        "non-finite state produced at t = {t}; last valid state at t = {last_t} \
         had sup u = {last_sup_u}, sup v = {last_sup_v}"
    )]
    Blowup {
        t: f64,
        last_t: f64,
        last_sup_u: f64,
        last_sup_v: f64,
    },

    #[error("initial data must be non-negative: {0}")]
    NegativeInitialData(String),

    #[error("need at least 8 snapshots per unit time, got {per_unit_time:.3}")]
    InsufficientSnapshots { per_unit_time: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed snapshot file: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
