use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside the chart domain: {0}")]
    ChartDomain(String),

    #[error("immersion Jacobian is rank deficient at node {node}")]
    RankDeficient { node: usize },

    #[error("metric is singular or indefinite at node {node}")]
    SingularMetric { node: usize },

    #[error("one-form too large for the Lagrangian neighbourhood: |y| = {size:.3e} >= delta = {delta:.3e}")]
    OneFormTooLarge { size: f64, delta: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("operator is not self-adjoint: relative asymmetry {asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSelfAdjoint { asymmetry: f64, tolerance: f64 },

    #[error("no spectral gap around zero: largest kernel eigenvalue {inside:.3e}, smallest outside {outside:.3e}")]
    NoSpectralGap { inside: f64, outside: f64 },

    #[error("degenerate structure: {0}")]
    Degenerate(String),

    #[error("iteration did not converge: {0}")]
    NotConverged(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
