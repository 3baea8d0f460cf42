//! Crate-wide error type.

use thiserror::Error;

/// Errors produced while building or checking geometric objects.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },

    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdent { name: String, offset: usize },

    #[error("arity error at offset {offset}: {msg}")]
    Arity { offset: usize, msg: String },

    #[error("unknown coordinate '{name}'")]
    UnknownCoordinate { name: String },

    #[error("division by zero at point {point:?}")]
    DivisionByZero { point: Vec<f64> },

    #[error("non-finite value at point {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("chart mismatch: '{left}' vs '{right}'")]
    ChartMismatch { left: String, right: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid chart: {0}")]
    InvalidChart(String),

    #[error("frame is not isotropic (max pairing {max_pairing:.3e})")]
    NotIsotropic { max_pairing: f64 },

    #[error("frame rank deficient: rank {rank} < {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error("bi-corank parity violated: n={n}, r={r}, s={s}")]
    ParityViolation { n: usize, r: usize, s: usize },

    #[error("degree error: {0}")]
    Degree(String),

    #[error("2-form is not closed: residual {residual:.3e} at {point:?}")]
    NotClosed { residual: f64, point: Vec<f64> },

    #[error("pair (X, dH) is not a section of the structure: residual {residual:.3e} at {point:?}")]
    NotHamiltonian { residual: f64, point: Vec<f64> },

    #[error("non-regular constraint: {0}")]
    NonRegularConstraint(String),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("flow left the chart domain at {point:?}")]
    LeftDomain { point: Vec<f64> },

    #[error("no recurrence within time budget {t_max}; level set may be non-compact")]
    NoRecurrence { t_max: f64 },

    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),

    #[error("lattice is rank deficient")]
    LatticeRankDeficient,

    #[error("point is off the level set: |dF| = {deviation:.3e}")]
    OffLevelSet { deviation: f64 },

    #[error("quadrature did not converge: last change {change:.3e}")]
    QuadratureDiverged { change: f64 },

    #[error("singular frequency matrix")]
    SingularFrequencies,

    #[error("matrix is not unimodular (det {det})")]
    NotUnimodular { det: f64 },

    #[error("form mismatch: {0}")]
    FormMismatch(String),

    #[error("declared hypothesis failed to verify: {0}")]
    HypothesisFailed(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
