//! Convective half-step solved along characteristics.

use crate::model::{GridSpec, MarketParams};

/// Value of the piecewise-linear interpolant of `pi` (nodes `i·h`) at `x`.
///
/// Left of the domain the Dirichlet value −E applies; right of it the
/// truncated far-field value 0.
pub fn interpolate(pi: &[f64], h: f64, x: f64, strike: f64) -> f64 {
    interpolate_at(pi, x / h, strike)
}

/// [`interpolate`] at the fractional node index `pos`.
fn interpolate_at(pi: &[f64], pos: f64, strike: f64) -> f64 {
    let n = pi.len() - 1;
    if pos <= 0.0 {
        return -strike;
    }
    if pos >= n as f64 {
        return if pos == n as f64 { pi[n] } else { 0.0 };
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if w == 0.0 {
        pi[i]
    } else {
        pi[i] + w * (pi[i + 1] - pi[i])
    }
}

/// Π^{j−1/2}_i = Π^{j−1}(ξ_i) with ξ_i = x_i − ln ρ^j + ln ρ^{j−1} − (r − q)k.
pub fn transport_step(
    pi_prev: &[f64],
    rho_prev: f64,
    rho_new: f64,
    k: f64,
    grid: &GridSpec,
    params: &MarketParams,
) -> Vec<f64> {
    let h = grid.h();
    let shift = rho_new.ln() - rho_prev.ln() + (params.rate - params.dividend_yield) * k;
    let offset = shift / h;
    let mut out: Vec<f64> = (0..pi_prev.len())
        .map(|i| interpolate_at(pi_prev, i as f64 - offset, params.strike))
        .collect();
    out[0] = -params.strike;
    out
}
