//! Problem definition in the fixed-domain variables.
//!
//! With τ = T − t, x = ln(ρ(τ)/S) and Π = V − S ∂V/∂S, the continuation
//! region 0 < S < S_f(t) becomes the half-line x > 0, and the free boundary
//! ρ(τ) = S_f(T − τ) becomes an unknown scalar coupled to Π.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::scheme::quadrature::trapezoid_weighted;

/// Contract and market constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Exercise price E.
    pub strike: f64,
    /// Maturity T in years.
    pub maturity: f64,
    /// Riskless rate r.
    pub rate: f64,
    /// Continuous dividend yield q.
    pub dividend_yield: f64,
}

impl MarketParams {
    /// Validates `E > 0`, `T > 0`, `r > 0` and `0 < q <= r`.
    pub fn new(
        strike: f64,
        maturity: f64,
        rate: f64,
        dividend_yield: f64,
    ) -> Result<Self, ModelError> {
        let p = Self {
            strike,
            maturity,
            rate,
            dividend_yield,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidParams(msg.to_string()));
        let all_finite = [self.strike, self.maturity, self.rate, self.dividend_yield]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("parameters must be finite");
        }
        if self.strike <= 0.0 {
            return bad("strike must be positive");
        }
        if self.maturity <= 0.0 {
            return bad("maturity must be positive");
        }
        if self.rate <= 0.0 {
            return bad("rate must be positive");
        }
        if self.dividend_yield <= 0.0 {
            return bad("dividend yield must be positive (rho(0) = rE/q)");
        }
        if self.dividend_yield > self.rate {
            return bad("dividend yield must not exceed the rate (0 < q <= r)");
        }
        Ok(())
    }

    /// ρ(0) = rE/q, the boundary position at expiry.
    pub fn initial_boundary(&self) -> f64 {
        self.rate * self.strike / self.dividend_yield
    }
}

/// Truncated spatial domain `[0, L]` and the uniform space/time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Truncation L of the x-domain.
    pub length: f64,
    /// Spatial intervals n.
    pub space_steps: usize,
    /// Time steps m.
    pub time_steps: usize,
}

impl GridSpec {
    pub const DEFAULT_LENGTH: f64 = 3.0;

    pub fn new(length: f64, space_steps: usize, time_steps: usize) -> Result<Self, ModelError> {
        let g = Self {
            length,
            space_steps,
            time_steps,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(ModelError::InvalidGrid("length must be positive".into()));
        }
        if self.space_steps < 2 {
            return Err(ModelError::InvalidGrid(
                "space_steps must be at least 2".into(),
            ));
        }
        if self.time_steps < 1 {
            return Err(ModelError::InvalidGrid(
                "time_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.length / self.space_steps as f64
    }

    pub fn k(&self, maturity: f64) -> f64 {
        maturity / self.time_steps as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn tau(&self, j: usize, maturity: f64) -> f64 {
        j as f64 * self.k(maturity)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.space_steps).map(|i| self.x(i)).collect()
    }
}

/// (Π, ρ) at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedState {
    pub pi: Vec<f64>,
    pub rho: f64,
    pub tau: f64,
}

/// ρ(τ_j) = S_f(T − τ_j) at every recorded level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryCurve {
    pub taus: Vec<f64>,
    pub rhos: Vec<f64>,
}

impl BoundaryCurve {
    pub fn push(&mut self, tau: f64, rho: f64) {
        self.taus.push(tau);
        self.rhos.push(rho);
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn last_rho(&self) -> Option<f64> {
        self.rhos.last().copied()
    }
}

/// Payoff data at τ = 0: Π = −E where S > E (x < ln(r/q)), 0 elsewhere.
pub fn initial_state(
    params: &MarketParams,
    grid: &GridSpec,
) -> Result<TransformedState, ModelError> {
    params.validate()?;
    grid.validate()?;
    let e = params.strike;
    let kink = (params.rate / params.dividend_yield).ln();
    let n = grid.space_steps;
    let mut pi: Vec<f64> = (0..=n)
        .map(|i| if grid.x(i) < kink { -e } else { 0.0 })
        .collect();
    pi[0] = -e;
    pi[n] = 0.0;
    Ok(TransformedState {
        pi,
        rho: params.initial_boundary(),
        tau: 0.0,
    })
}

/// S = ρ e^{−x}.
pub fn x_to_s(x: f64, rho: f64) -> f64 {
    rho * (-x).exp()
}

/// Option price V(S) on the continuation region `0 < S <= ρ`.
///
/// Uses ∂(V/S)/∂S = −Π/S² and V(ρ) = ρ − E, which in the transformed
/// variable reads V(S) = S[(ρ − E)/ρ + ρ⁻¹∫₀^{x_S} Π(x') e^{x'} dx'].
/// Beyond the truncation length Π is taken as zero.
pub fn price_from_pi(
    state: &TransformedState,
    params: &MarketParams,
    grid: &GridSpec,
    s: f64,
) -> Result<f64, ModelError> {
    let rho = state.rho;
    if !(s > 0.0 && s <= rho) {
        return Err(ModelError::OutOfRange { s, rho });
    }
    let xs = (rho / s).ln();
    let h = grid.h();
    let n = grid.space_steps;
    let upper = xs.min(grid.length);

    // whole cells, then the partial cell up to `upper`
    let full = ((upper / h).floor() as usize).min(n);
    let mut q = trapezoid_weighted(&state.pi[..=full], h, |i| (i as f64 * h).exp());
    let x_full = full as f64 * h;
    if upper > x_full && full < n {
        let w = (upper - x_full) / h;
        let pi_end = state.pi[full] + w * (state.pi[full + 1] - state.pi[full]);
        q += 0.5 * (upper - x_full) * (state.pi[full] * x_full.exp() + pi_end * upper.exp());
    }
    Ok(s * ((rho - params.strike) / rho + q / rho))
}
