use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: file does not start with RFEK1")]
    BadMagic,

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("zero dimension in field header")]
    ZeroDimension,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("source mask contains no source nodes")]
    EmptySourceMask,

    #[error("solver did not converge after {iterations} iterations (max delta {max_delta:e})")]
    NotConverged { iterations: usize, max_delta: f64 },

    #[error("inconsistent fixed point at node {node}: stored {stored}, recomputed {recomputed}")]
    InconsistentFixedPoint {
        node: usize,
        stored: f64,
        recomputed: f64,
    },

    #[error("metric is not positive definite at node {node}")]
    NonSpdInput { node: usize },

    #[error("drift is infeasible: |b|_(G^-1) = {norm} >= 1")]
    InfeasibleDrift { norm: f64 },

    #[error("loss diverged at iteration {iteration}: {loss:e} exceeds 1e6 x initial {initial:e}")]
    DivergedLoss {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("unknown scenario kind: {0}")]
    UnknownScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
