//! Operator-splitting time stepping for the transformed problem.
//!
//! Each time level couples three updates, repeated as micro-iterations
//! until they stop changing:
//!
//! 1. the integrated constraint gives ρ from the current Π iterate,
//! 2. transport along characteristics gives the intermediate Π^{j−1/2},
//! 3. an implicit diffusion step gives Π^j.
//!
//! See [`Acceleration`] and [`Linearization`] for how the iteration is
//! organised.

pub mod diffusion;
pub mod quadrature;
pub mod transport;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::SchemeError;
use crate::model::{initial_state, BoundaryCurve, GridSpec, MarketParams, TransformedState};
use crate::volatility::VolatilityModel;

pub use diffusion::{
    assemble_diffusion, assemble_newton, diffusion_residual, solve_tridiagonal, TridiagonalSystem,
};
pub use quadrature::{quad_i0, quad_i1};
pub use transport::transport_step;

/// What to do when a level exhausts its micro-iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonConvergencePolicy {
    #[default]
    Warn,
    Abort,
}

/// How the micro-iterations couple ρ and Π.
///
/// `None` is plain successive substitution: ρ^{p+1} = F(Π^p, ρ^p), then one
/// transport and one linearized diffusion solve. The integrated constraint
/// is nearly neutral under a pure shift of the profile (E ln ρ + ∫Π barely
/// moves), so this contracts by only 1 − O(k/h) per pass and stalls far
/// from the fixed point.
///
/// `Secant` treats the level as a scalar equation R(ρ) = F(Π(ρ), ρ) − ρ = 0,
/// where Π(ρ) is the transport plus the diffusion equations solved to
/// convergence. Each micro-iteration is one safeguarded secant step on ρ
/// (the slope carried over from the previous level); the fixed point is the
/// same discrete solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    None,
    #[default]
    Secant,
}

/// How the nonlinear diffusion step is linearized about the micro-iterate.
///
/// `Frozen` evaluates σ at Π^{j,p} and solves the resulting linear system.
/// Near the payoff kink Γ is of order E/h, where this lagged iteration is
/// oscillatory with a factor close to −1. `Newton` adds the ∂σ²/∂Γ terms
/// (still tridiagonal) and has the same fixed point; for a constant σ the
/// two coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    Frozen,
    #[default]
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationConfig {
    pub tol: f64,
    pub p_max: usize,
    pub on_nonconvergence: NonConvergencePolicy,
    pub acceleration: Acceleration,
    pub linearization: Linearization,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            p_max: 6,
            on_nonconvergence: NonConvergencePolicy::Warn,
            acceleration: Acceleration::Secant,
            linearization: Linearization::Newton,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<(), SchemeError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SchemeError::InvalidConfig("tol must be positive".into()));
        }
        if self.p_max == 0 {
            return Err(SchemeError::InvalidConfig(
                "p_max must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-level record of the micro-iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub iterations_used: usize,
    pub final_residual: f64,
    pub gamma_clamp_count: usize,
    pub rho_change: f64,
    pub converged: bool,
    /// Transport + diffusion solves spent on this level.
    pub evaluations: usize,
    /// Secant estimate of dR/dρ for R(ρ) = F(Π(ρ), ρ) − ρ, when available.
    pub constraint_slope: Option<f64>,
    /// Residual after each micro-iteration.
    pub residuals: Vec<f64>,
}

impl StepDiagnostics {
    /// Whether the residuals after the first iterate never increase.
    pub fn contracting(&self) -> bool {
        self.residuals
            .iter()
            .skip(1)
            .zip(self.residuals.iter().skip(2))
            .all(|(a, b)| b <= a)
    }
}

/// Right-hand side of the integrated constraint solved for ρ:
///
/// E ln ρ^j = E ln ρ^{j−1} + I₀(Π^{j−1}) − I₀(Π^j) + k(qE − qρ^j − I₁(ρ^j, Π^j)),
///
/// evaluated at the current iterate (`pi_iter`, `rho_iter`).
#[allow(clippy::too_many_arguments)]
pub fn algebraic_update<M: VolatilityModel + ?Sized>(
    pi_prev_level: &[f64],
    pi_iter: &[f64],
    rho_prev_level: f64,
    rho_iter: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    h: f64,
) -> Result<(f64, usize), SchemeError> {
    let e = params.strike;
    let q = params.dividend_yield;
    let (i1, clamps) = quad_i1(pi_iter, rho_iter, tau, model, params, h);
    let increment =
        quad_i0(pi_prev_level, h) - quad_i0(pi_iter, h) + k * (q * e - q * rho_iter - i1);
    let rho = rho_prev_level * (increment / e).exp();
    if !(rho.is_finite() && rho > 0.0) {
        return Err(SchemeError::NonpositiveRho { tau });
    }
    Ok((rho, clamps))
}

fn scaled_residual(pi_new: &[f64], pi_old: &[f64], rho_new: f64, rho_old: f64, e: f64) -> f64 {
    let dpi = pi_new
        .iter()
        .zip(pi_old)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ((rho_new - rho_old).abs() / e).max(dpi / e)
}

/// Advances one time level by successive micro-iterations starting from
/// Π^{j,0} = Π^{j−1}, ρ^{j,0} = ρ^{j−1}.
#[allow(clippy::too_many_arguments)]
pub fn time_step<M: VolatilityModel + ?Sized>(
    state_prev: &TransformedState,
    tau_new: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
    cfg: &IterationConfig,
) -> Result<(TransformedState, StepDiagnostics), SchemeError> {
    advance_level(state_prev, tau_new, k, model, params, grid, cfg, None)
}

/// Transport then one linearized diffusion solve to the level's new
/// boundary `rho`, linearized about `pi_freeze`.
#[allow(clippy::too_many_arguments)]
fn split_step<M: VolatilityModel + ?Sized>(
    state_prev: &TransformedState,
    pi_freeze: &[f64],
    rho: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
    linearization: Linearization,
) -> Result<(Vec<f64>, usize), SchemeError> {
    let half = transport_step(&state_prev.pi, state_prev.rho, rho, k, grid, params);
    linearized_solve(
        pi_freeze,
        &half,
        rho,
        tau,
        k,
        model,
        params,
        grid,
        linearization,
    )
}

#[allow(clippy::too_many_arguments)]
fn linearized_solve<M: VolatilityModel + ?Sized>(
    pi_freeze: &[f64],
    half: &[f64],
    rho: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
    linearization: Linearization,
) -> Result<(Vec<f64>, usize), SchemeError> {
    let (interior, clamps) = match linearization {
        Linearization::Frozen => {
            let (sys, clamps) =
                assemble_diffusion(pi_freeze, half, rho, tau, k, model, params, grid);
            (solve_tridiagonal(&sys)?, clamps)
        }
        Linearization::Newton => {
            let (sys, clamps) = assemble_newton(pi_freeze, half, rho, tau, k, model, params, grid);
            let mut u = solve_tridiagonal(&sys)?;
            for (v, base) in u.iter_mut().zip(&pi_freeze[1..]) {
                *v += base;
            }
            (u, clamps)
        }
    };
    Ok((with_boundary_values(&interior, params), clamps))
}

fn with_boundary_values(interior: &[f64], params: &MarketParams) -> Vec<f64> {
    let mut pi = Vec::with_capacity(interior.len() + 2);
    pi.push(-params.strike);
    pi.extend_from_slice(interior);
    pi.push(0.0);
    pi
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Linearized solves allowed for one nonlinear diffusion step.
const MAX_DIFFUSION_SOLVES: usize = 60;

/// Transport to `rho`, then the implicit diffusion equations solved to
/// `tol_abs` (max-norm update) starting from `start`.
///
/// Newton steps are damped by halving until the max-norm of the residual
/// (scaled by k) decreases. Returns the profile, the clamp count and the
/// number of linear solves.
#[allow(clippy::too_many_arguments)]
fn solve_diffusion<M: VolatilityModel + ?Sized>(
    state_prev: &TransformedState,
    start: &[f64],
    rho: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
    linearization: Linearization,
    tol_abs: f64,
) -> Result<(Vec<f64>, usize, usize), SchemeError> {
    let h = grid.h();
    let half = transport_step(&state_prev.pi, state_prev.rho, rho, k, grid, params);
    let merit =
        |u: &[f64]| k * max_abs(&diffusion_residual(u, &half, rho, tau, k, model, params, h));
    let mut u = start.to_vec();
    u[0] = -params.strike;
    *u.last_mut().expect("grid has nodes") = 0.0;
    let mut clamps = 0;
    let mut solves = 0;
    let mut current = merit(&u);
    while solves < MAX_DIFFUSION_SOLVES {
        if current <= 1e-3 * tol_abs {
            break;
        }
        let (candidate, c) =
            linearized_solve(&u, &half, rho, tau, k, model, params, grid, linearization)?;
        clamps += c;
        solves += 1;
        let (next, next_merit) = match linearization {
            Linearization::Frozen => {
                let m = merit(&candidate);
                (candidate, m)
            }
            Linearization::Newton => {
                let mut alpha = 1.0;
                loop {
                    let trial: Vec<f64> = u
                        .iter()
                        .zip(&candidate)
                        .map(|(a, b)| a + alpha * (b - a))
                        .collect();
                    let m = merit(&trial);
                    if m < current || alpha < 1.0 / 64.0 {
                        break (trial, m);
                    }
                    alpha *= 0.5;
                }
            }
        };
        let step = u
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        current = next_merit;
        if step <= tol_abs {
            break;
        }
    }
    Ok((u, clamps, solves))
}

/// [`time_step`] with an estimate of dR/dρ carried over from the previous
/// level, which saves the first secant step.
#[allow(clippy::too_many_arguments)]
fn advance_level<M: VolatilityModel + ?Sized>(
    state_prev: &TransformedState,
    tau_new: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
    cfg: &IterationConfig,
    slope_hint: Option<f64>,
) -> Result<(TransformedState, StepDiagnostics), SchemeError> {
    let e = params.strike;
    let h = grid.h();

    let mut pi_iter = state_prev.pi.clone();
    let mut rho_iter = state_prev.rho;
    let mut clamps = 0;
    let mut evaluations = 0;
    let mut residuals = Vec::with_capacity(cfg.p_max);
    let mut converged = false;
    // Without a carried slope, the explicit −kqρ term of the constraint
    // gives the leading part of dR/dρ ≈ −kqρ/E.
    let mut slope = slope_hint
        .or(Some(-k * params.dividend_yield * state_prev.rho / e))
        .filter(|s| *s < 0.0 && s.is_finite());

    match cfg.acceleration {
        Acceleration::None => {
            for _ in 0..cfg.p_max {
                let (rho_next, c1) = algebraic_update(
                    &state_prev.pi,
                    &pi_iter,
                    state_prev.rho,
                    rho_iter,
                    tau_new,
                    k,
                    model,
                    params,
                    h,
                )?;
                let (pi_next, c2) = split_step(
                    state_prev,
                    &pi_iter,
                    rho_next,
                    tau_new,
                    k,
                    model,
                    params,
                    grid,
                    cfg.linearization,
                )?;
                clamps += c1 + c2;
                evaluations += 1;
                let residual = scaled_residual(&pi_next, &pi_iter, rho_next, rho_iter, e);
                residuals.push(residual);
                pi_iter = pi_next;
                rho_iter = rho_next;
                if residual <= cfg.tol {
                    converged = true;
                    break;
                }
            }
        }
        Acceleration::Secant => {
            let tol_abs = 1e-2 * cfg.tol * e;
            // root of R lies in (lo, hi) once both signs have been seen
            let mut lo = 0.0_f64;
            let mut hi = f64::INFINITY;
            let mut last: Option<(f64, f64)> = None;
            let mut rho = rho_iter;
            let mut from_secant = false;
            for _ in 0..cfg.p_max {
                let (pi, c1, solves) = solve_diffusion(
                    state_prev,
                    &pi_iter,
                    rho,
                    tau_new,
                    k,
                    model,
                    params,
                    grid,
                    cfg.linearization,
                    tol_abs,
                )?;
                let (target, c2) = algebraic_update(
                    &state_prev.pi,
                    &pi,
                    state_prev.rho,
                    rho,
                    tau_new,
                    k,
                    model,
                    params,
                    h,
                )?;
                clamps += c1 + c2;
                evaluations += solves;
                let defect = target - rho;

                let residual = scaled_residual(&pi, &pi_iter, rho, rho_iter, e);
                residuals.push(residual);
                pi_iter = pi;
                rho_iter = rho;
                // a substitution step understates the distance to the root
                // (R is nearly flat), so only a secant step may end the level
                if residual <= cfg.tol && from_secant {
                    converged = true;
                    break;
                }

                if defect > 0.0 {
                    lo = lo.max(rho);
                } else {
                    hi = hi.min(rho);
                }
                if let Some((rho_old, defect_old)) = last {
                    let s = (defect - defect_old) / (rho - rho_old);
                    if s.is_finite() && s < 0.0 {
                        slope = Some(s);
                    }
                }
                last = Some((rho, defect));

                let proposal = match slope {
                    Some(s) => rho - defect / s,
                    None => rho + defect,
                };
                from_secant = slope.is_some();
                // keep the step inside the bracket and within 10% of ρ
                let capped = proposal.clamp(0.9 * rho, 1.1 * rho);
                rho = if (lo..=hi).contains(&capped) {
                    capped
                } else if hi.is_finite() && lo > 0.0 {
                    from_secant = false;
                    0.5 * (lo + hi)
                } else {
                    capped
                };
                debug!("tau = {tau_new}: defect {defect:e}, next rho {rho}");
            }
        }
    }

    let diag = StepDiagnostics {
        iterations_used: residuals.len(),
        final_residual: *residuals.last().unwrap_or(&0.0),
        gamma_clamp_count: clamps,
        rho_change: rho_iter - state_prev.rho,
        converged,
        constraint_slope: slope,
        evaluations,
        residuals,
    };
    if !converged {
        match cfg.on_nonconvergence {
            NonConvergencePolicy::Abort => {
                return Err(SchemeError::NonConvergence {
                    tau: tau_new,
                    residual: diag.final_residual,
                    iterations: diag.iterations_used,
                })
            }
            NonConvergencePolicy::Warn => warn!(
                "tau = {tau_new}: residual {:e} after {} micro-iterations",
                diag.final_residual, diag.iterations_used
            ),
        }
    }
    Ok((
        TransformedState {
            pi: pi_iter,
            rho: rho_iter,
            tau: tau_new,
        },
        diag,
    ))
}

/// Result of a full march from τ = 0 to τ = T.
#[derive(Debug, Clone)]
pub struct Solution {
    pub curve: BoundaryCurve,
    pub final_state: TransformedState,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Solution {
    pub fn nonconverged_levels(&self) -> usize {
        self.diagnostics.iter().filter(|d| !d.converged).count()
    }
}

/// Marches j = 1..m from the payoff data.
pub fn solve_boundary<M: VolatilityModel + ?Sized>(
    params: &MarketParams,
    grid: &GridSpec,
    model: &M,
    cfg: &IterationConfig,
) -> Result<Solution, SchemeError> {
    solve_boundary_with(params, grid, model, cfg, |_, _| {})
}

/// [`solve_boundary`] with a callback seeing every level (including j = 0).
pub fn solve_boundary_with<M, F>(
    params: &MarketParams,
    grid: &GridSpec,
    model: &M,
    cfg: &IterationConfig,
    mut on_level: F,
) -> Result<Solution, SchemeError>
where
    M: VolatilityModel + ?Sized,
    F: FnMut(usize, &TransformedState),
{
    cfg.validate()?;
    let mut state = initial_state(params, grid)?;
    let k = grid.k(params.maturity);
    let m = grid.time_steps;

    let mut curve = BoundaryCurve::default();
    curve.push(0.0, state.rho);
    on_level(0, &state);
    let mut diagnostics: Vec<StepDiagnostics> = Vec::with_capacity(m);
    for j in 1..=m {
        let tau = grid.tau(j, params.maturity);
        let hint = diagnostics.last().and_then(|d| d.constraint_slope);
        let (next, diag) = advance_level(&state, tau, k, model, params, grid, cfg, hint)?;
        state = next;
        curve.push(tau, state.rho);
        on_level(j, &state);
        diagnostics.push(diag);
    }
    Ok(Solution {
        curve,
        final_state: state,
        diagnostics,
    })
}

/// Relative defect of the pointwise boundary condition
/// ρ = rE/q + σ²(γ₀, ρ, τ)γ₀/(2q), with γ₀ = (Π₁ − Π₀)/h.
pub fn pointwise_constraint_defect<M: VolatilityModel + ?Sized>(
    state: &TransformedState,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
) -> f64 {
    let gamma0 = (state.pi[1] - state.pi[0]) / grid.h();
    let q = params.dividend_yield;
    let target = params.initial_boundary()
        + model.sigma_sq(gamma0, state.rho, state.tau) * gamma0 / (2.0 * q);
    (state.rho - target).abs() / state.rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volatility::ConstantVol;

    fn reference_params() -> MarketParams {
        MarketParams::new(10.0, 1.0, 0.1, 0.05).unwrap()
    }

    #[test]
    fn zero_step_keeps_rho() {
        let p = reference_params();
        let g = GridSpec::new(3.0, 60, 10).unwrap();
        let st = initial_state(&p, &g).unwrap();
        let vol = ConstantVol::new(0.2).unwrap();
        let (rho, _) =
            algebraic_update(&st.pi, &st.pi, 20.0, 20.0, 0.0, 0.0, &vol, &p, g.h()).unwrap();
        assert_eq!(rho, 20.0);
    }

    #[test]
    fn stationary_bracket_keeps_rho() {
        // q = r: qE − qρ(0) = 0, and with Π ≡ 0 inside and a zero-diffusion
        // model the I₁ term vanishes apart from rΠ₀ at the left node.
        let p = MarketParams::new(10.0, 1.0, 0.05, 0.05).unwrap();
        let g = GridSpec::new(3.0, 30, 10).unwrap();
        let st = initial_state(&p, &g).unwrap();
        let vol = ConstantVol::new(1e-300).unwrap();
        let (i1, _) = quad_i1(&st.pi, st.rho, 0.0, &vol, &p, g.h());
        let bracket = p.dividend_yield * 10.0 - p.dividend_yield * st.rho - i1;
        let (rho, _) =
            algebraic_update(&st.pi, &st.pi, st.rho, st.rho, 0.0, 0.01, &vol, &p, g.h()).unwrap();
        let expected = (st.rho.ln() + 0.01 * bracket / 10.0).exp();
        assert_eq!(rho, expected);
    }

    #[test]
    fn first_level_moves_boundary_up() {
        let p = reference_params();
        let g = GridSpec::new(3.0, 300, 1000).unwrap();
        let st = initial_state(&p, &g).unwrap();
        let vol = ConstantVol::new(0.2).unwrap();
        let k = g.k(1.0);
        let (next, _) = time_step(&st, k, k, &vol, &p, &g, &IterationConfig::default()).unwrap();
        assert!(next.rho > 20.0, "rho = {}", next.rho);
    }

    #[test]
    fn vanishing_step_is_identity() {
        let p = reference_params();
        let g = GridSpec::new(3.0, 100, 100).unwrap();
        let vol = ConstantVol::new(0.2).unwrap();
        let sol = solve_boundary(
            &p,
            &GridSpec::new(3.0, 100, 50).unwrap(),
            &vol,
            &IterationConfig::default(),
        )
        .unwrap();
        let st = sol.final_state;
        let k = 1e-15;
        let (next, _) = time_step(
            &st,
            st.tau + k,
            k,
            &vol,
            &p,
            &g,
            &IterationConfig::default(),
        )
        .unwrap();
        assert!((next.rho - st.rho).abs() <= 1e-10);
        for (a, b) in next.pi.iter().zip(&st.pi) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn dirichlet_values_exact() {
        let p = reference_params();
        let g = GridSpec::new(3.0, 80, 200).unwrap();
        let vol = ConstantVol::new(0.2).unwrap();
        let mut seen = 0;
        solve_boundary_with(&p, &g, &vol, &IterationConfig::default(), |_, st| {
            assert_eq!(st.pi[0], -10.0);
            assert_eq!(st.pi[80], 0.0);
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, 201);
    }

    #[test]
    fn abort_policy_surfaces_nonconvergence() {
        let p = reference_params();
        let g = GridSpec::new(3.0, 50, 10).unwrap();
        let vol = ConstantVol::new(0.2).unwrap();
        let cfg = IterationConfig {
            tol: 1e-300,
            p_max: 2,
            on_nonconvergence: NonConvergencePolicy::Abort,
            ..Default::default()
        };
        assert!(matches!(
            solve_boundary(&p, &g, &vol, &cfg),
            Err(SchemeError::NonConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn invalid_iteration_config() {
        assert!(IterationConfig {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(IterationConfig {
            p_max: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
