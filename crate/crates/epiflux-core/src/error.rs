//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("kernel row {row}: sum_j K[{row}][j] w_j = {sum} is off 1 beyond 1e-10 (set renormalize = true to rescale)")]
    Normalization { row: usize, sum: f64 },
    #[error("{what}({age}, trait {trait_index}) = {value} violates its bound")]
    Bound {
        what: &'static str,
        age: f64,
        trait_index: usize,
        value: f64,
    },
    #[error("initial age distribution: moment of order 2*alpha = {order} diverges")]
    Moment { order: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("snapshot grid exceeds the horizon: {snapshot} > {horizon}")]
    SnapshotBeyondHorizon { snapshot: f64, horizon: f64 },
    #[error("tabulated force of infection covers [0, {covered}], need [0, {needed}]")]
    GridCoverage { covered: f64, needed: f64 },
    #[error("event log missing from simulation output")]
    EventLogMissing,
}

#[derive(Debug, Error)]
pub enum LlnError {
    #[error("Picard iteration did not converge in {max_iters} iterations (last residual {residual:.3e})")]
    NonConvergence { max_iters: usize, residual: f64 },
    #[error("time {t} outside the solved horizon {horizon}")]
    Grid { t: f64, horizon: f64 },
    #[error("operation requires a parametric initial density, got an empirical sample")]
    EmpiricalInitial,
    #[error("invalid solver parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("functionals are tabulated on different age grids")]
    GridMismatch,
    #[error("time {t} outside the solved horizon {horizon}")]
    Grid { t: f64, horizon: f64 },
    #[error("unknown covariance block {0:?}")]
    UnknownBlock(String),
    #[error(transparent)]
    Lln(#[from] LlnError),
}

#[derive(Debug, Error)]
pub enum FluctError {
    #[error("noise batch and solver use different time grids")]
    GridMismatch,
    #[error("functional {0:?} absent from the noise batch")]
    MissingFunctional(String),
    #[error("implicit step {step}: diagonal block is singular")]
    SingularStep { step: usize },
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Lln(#[from] LlnError),
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("need at least {need} values of N spanning a decade, got {got}")]
    BadNList { need: usize, got: usize },
    #[error("KS test needs at least {min} replicas, got {got}")]
    TooFewReplicas { min: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Lln(#[from] LlnError),
    #[error(transparent)]
    Fluct(#[from] FluctError),
}
