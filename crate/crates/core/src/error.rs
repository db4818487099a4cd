use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolatilityError {
    #[error("singular ODE denominator at x = {x}, psi = {psi}")]
    SingularDenominator { x: f64, psi: f64 },
    #[error("Psi integration failed near x = {x}")]
    IntegrationFailure { x: f64 },
    #[error(
        "invalid Psi table request: x_max = {x_max}, node_count = {node_count}, seed_x = {seed_x}"
    )]
    InvalidTableSpec {
        x_max: f64,
        node_count: usize,
        seed_x: f64,
    },
    #[error("invalid volatility parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("asset price {s} outside the continuation region (0, {rho}]")]
    OutOfRange { s: f64, rho: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("tridiagonal pivot {pivot:e} at row {row} below tolerance (row scale {scale:e})")]
    NotDiagonallyDominant { row: usize, pivot: f64, scale: f64 },
    #[error("free boundary update produced a non-finite or nonpositive value at tau = {tau}")]
    NonpositiveRho { tau: f64 },
    #[error("micro-iterations did not converge at tau = {tau}: residual {residual:e} after {iterations} iterations")]
    NonConvergence {
        tau: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("invalid iteration config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("risk-neutral probability {p} outside [0, 1]; time step too large for sigma")]
    InvalidProbability { p: f64 },
    #[error("no exercise region found at t = {t}")]
    NoExerciseRegion { t: f64 },
    #[error("invalid lattice spec: {0}")]
    InvalidSpec(String),
}
