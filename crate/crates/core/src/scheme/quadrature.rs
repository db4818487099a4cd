//! Composite trapezoid quadratures for the integrated boundary constraint.

use crate::model::MarketParams;
use crate::volatility::VolatilityModel;

/// Composite trapezoid rule of `values` on a uniform grid of step `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => h * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Trapezoid rule of `values[i] * weight(i)`.
pub fn trapezoid_weighted(values: &[f64], h: f64, weight: impl Fn(usize) -> f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = (1..n - 1).map(|i| values[i] * weight(i)).sum();
    h * (0.5 * (values[0] * weight(0) + values[n - 1] * weight(n - 1)) + inner)
}

/// I₀(Π) ≈ ∫₀^∞ Π dx; the tail beyond the truncation length contributes 0.
pub fn quad_i0(pi: &[f64], h: f64) -> f64 {
    trapezoid(pi, h)
}

/// Forward-difference gamma (Π_{i+1} − Π_i)/h at node i; the last node
/// reuses the final backward difference.
#[inline]
pub fn forward_gamma(pi: &[f64], i: usize, h: f64) -> f64 {
    let i = i.min(pi.len() - 2);
    (pi[i + 1] - pi[i]) / h
}

/// I₁(ρ, Π) ≈ ∫₀^∞ (−½σ²(∂ₓΠ, ρe^{−x}, τ)∂ₓΠ + rΠ) dx.
///
/// σ² takes the forward-difference gamma, as in the diffusion step; the
/// factor ∂ₓΠ multiplying it is the centered difference (one-sided at the
/// end nodes), which is the convective term of the diffusion stencil. With
/// that choice the quadrature matches the discrete mass balance of the
/// scheme even across the payoff kink, where σ²γ is a one-cell spike.
///
/// Returns the quadrature together with the number of negative-gamma
/// clampings met while evaluating σ².
pub fn quad_i1<M: VolatilityModel + ?Sized>(
    pi: &[f64],
    rho: f64,
    tau: f64,
    model: &M,
    params: &MarketParams,
    h: f64,
) -> (f64, usize) {
    let n = pi.len() - 1;
    let mut clamps = 0;
    let integrand: Vec<f64> = (0..=n)
        .map(|i| {
            let gamma = forward_gamma(pi, i, h);
            if model.clamps(gamma, tau) {
                clamps += 1;
            }
            let s = rho * (-(i as f64) * h).exp();
            let slope = if i == 0 || i == n {
                gamma
            } else {
                (pi[i + 1] - pi[i - 1]) / (2.0 * h)
            };
            -0.5 * model.sigma_sq(gamma, s, tau) * slope + params.rate * pi[i]
        })
        .collect();
    (trapezoid(&integrand, h), clamps)
}
