use thiserror::Error;

/// Errors raised by the simulation engine and the experiment harness.
#[derive(Debug, Error)]
pub enum TrotterError {
    #[error("capacity exceeded: {what} requires N <= {max}, got N = {n}")]
    Capacity {
        what: &'static str,
        n: usize,
        max: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("Krylov propagation did not converge (residual estimate {residual:e} after {substeps} substeps)")]
    Convergence { residual: f64, substeps: usize },

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("ill-conditioned normalization: {0}")]
    IllConditioned(String),

    #[error("window of {window} samples does not fit a trajectory of length {len}")]
    Window { window: usize, len: usize },

    #[error("integrator step too coarse: trace drift {drift:e} exceeds {limit:e}")]
    IntegratorStep { drift: f64, limit: f64 },

    #[error("no threshold crossing found: {0}")]
    ThresholdNotFound(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TrotterError>;
