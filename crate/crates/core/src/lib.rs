//! Early exercise boundary of American calls under nonlinear Black–Scholes
//! models, computed on a fixed spatial domain by operator splitting.

pub mod cli;
pub mod error;
pub mod model;
pub mod oracle;
pub mod scheme;
pub mod volatility;

pub use error::{ModelError, OracleError, SchemeError, VolatilityError};
pub use model::{
    initial_state, price_from_pi, x_to_s, BoundaryCurve, GridSpec, MarketParams, TransformedState,
};
pub use oracle::{binomial_boundary, binomial_price, BinomialSpec};
pub use scheme::{
    solve_boundary, solve_boundary_with, time_step, IterationConfig, Linearization,
    NonConvergencePolicy, Solution, StepDiagnostics,
};
pub use volatility::{
    build_psi_table, BarlesSonerVol, ConstantVol, PsiTable, Volatility, VolatilityModel,
};
