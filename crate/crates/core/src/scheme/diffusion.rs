//! Implicit diffusion half-step and the tridiagonal solver behind it.

use crate::error::SchemeError;
use crate::model::{GridSpec, MarketParams};
use crate::scheme::quadrature::forward_gamma;
use crate::volatility::VolatilityModel;

/// Linear system for the interior unknowns Π_1..Π_{n−1}. Row `r` holds
/// `lower[r]·u[r−1] + diag[r]·u[r] + upper[r]·u[r+1] = rhs[r]`; `lower[0]`
/// and the last `upper` entry are unused (Dirichlet data already sits in
/// `rhs`).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A·u` for the stored coefficients.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|r| {
                let mut v = self.diag[r] * u[r];
                if r > 0 {
                    v += self.lower[r] * u[r - 1];
                }
                if r + 1 < n {
                    v += self.upper[r] * u[r + 1];
                }
                v
            })
            .collect()
    }
}

/// σ² at nodes 0..n−1 from the forward-difference gamma of `pi`.
pub fn frozen_sigma_sq<M: VolatilityModel + ?Sized>(
    pi: &[f64],
    rho: f64,
    tau: f64,
    model: &M,
    h: f64,
) -> (Vec<f64>, usize) {
    let n = pi.len() - 1;
    let mut clamps = 0;
    let sig = (0..n)
        .map(|i| {
            let gamma = forward_gamma(pi, i, h);
            if model.clamps(gamma, tau) {
                clamps += 1;
            }
            model.sigma_sq(gamma, rho * (-(i as f64) * h).exp(), tau)
        })
        .collect();
    (sig, clamps)
}

/// Assembles the implicit step
///
/// (Π_i − Π^{½}_i)/k + rΠ_i − σ²_i/2·(Π_{i+1} − Π_{i−1})/(2h)
///     − [σ²_i(Π_{i+1} − Π_i) − σ²_{i−1}(Π_i − Π_{i−1})]/(2h²) = 0
///
/// with σ frozen at `pi_iter`, multiplied through so the row reads
/// `A·Π = Π^{½}/k`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_diffusion<M: VolatilityModel + ?Sized>(
    pi_iter: &[f64],
    pi_half: &[f64],
    rho: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
) -> (TridiagonalSystem, usize) {
    let h = grid.h();
    let (sig, clamps) = frozen_sigma_sq(pi_iter, rho, tau, model, h);
    (assemble_with_sigma(&sig, pi_half, k, params, h), clamps)
}

pub(crate) fn assemble_with_sigma(
    sig: &[f64],
    pi_half: &[f64],
    k: f64,
    params: &MarketParams,
    h: f64,
) -> TridiagonalSystem {
    let n = pi_half.len() - 1;
    let m = n - 1;
    let left = -params.strike;
    let right = 0.0;
    let inv_k = 1.0 / k;
    let h2 = 2.0 * h * h;
    let h4 = 4.0 * h;

    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for r in 0..m {
        let i = r + 1;
        let (s_i, s_im1) = (sig[i], sig[i - 1]);
        let lo = s_i / h4 - s_im1 / h2;
        let up = -s_i / h4 - s_i / h2;
        lower[r] = lo;
        diag[r] = inv_k + params.rate + (s_i + s_im1) / h2;
        upper[r] = up;
        rhs[r] = pi_half[i] * inv_k;
        if i == 1 {
            rhs[r] -= lo * left;
            lower[r] = 0.0;
        }
        if i == n - 1 {
            rhs[r] -= up * right;
            upper[r] = 0.0;
        }
    }
    TridiagonalSystem {
        lower,
        diag,
        upper,
        rhs,
    }
}

/// Newton linearization of the diffusion step about `pi_iter`.
///
/// The returned system is in correction form: its solution δ (interior
/// nodes) gives the next iterate `pi_iter + δ`. Because σ²_i depends only on
/// Π_i and Π_{i+1}, the Jacobian keeps the tridiagonal shape; for a model
/// with ∂σ²/∂Γ = 0 it coincides with the frozen-coefficient matrix.
#[allow(clippy::too_many_arguments)]
pub fn assemble_newton<M: VolatilityModel + ?Sized>(
    pi_iter: &[f64],
    pi_half: &[f64],
    rho: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    grid: &GridSpec,
) -> (TridiagonalSystem, usize) {
    let h = grid.h();
    let n = pi_iter.len() - 1;
    let (sig, clamps) = frozen_sigma_sq(pi_iter, rho, tau, model, h);
    let mut sys = assemble_with_sigma(&sig, pi_half, k, params, h);
    // restore the couplings to the Dirichlet nodes for the residual
    let m = n - 1;
    let h2 = 2.0 * h * h;
    let h4 = 4.0 * h;
    let gamma: Vec<f64> = (0..n).map(|i| forward_gamma(pi_iter, i, h)).collect();
    let dsig: Vec<f64> = (0..n)
        .map(|i| model.d_sigma_sq_d_gamma(gamma[i], rho * (-(i as f64) * h).exp(), tau))
        .collect();
    let residual = residual_with_sigma(&sig, pi_iter, pi_half, k, params, h);
    for (r, res) in residual.iter().enumerate().take(m) {
        let i = r + 1;
        let c = (pi_iter[i + 1] - pi_iter[i - 1]) / h4 + gamma[i] / (2.0 * h);
        let flux_left = gamma[i - 1] * dsig[i - 1] / h2;
        let own = c * dsig[i] / h;
        sys.diag[r] += own + flux_left;
        if i > 1 {
            sys.lower[r] -= flux_left;
        }
        if i < n - 1 {
            sys.upper[r] -= own;
        }
        sys.rhs[r] = -res;
    }
    (sys, clamps)
}

/// Interior residuals of the nonlinear diffusion equations at `pi`, with σ
/// taken from `pi` itself (rows scaled as in [`assemble_diffusion`]).
#[allow(clippy::too_many_arguments)]
pub fn diffusion_residual<M: VolatilityModel + ?Sized>(
    pi: &[f64],
    pi_half: &[f64],
    rho: f64,
    tau: f64,
    k: f64,
    model: &M,
    params: &MarketParams,
    h: f64,
) -> Vec<f64> {
    let (sig, _) = frozen_sigma_sq(pi, rho, tau, model, h);
    residual_with_sigma(&sig, pi, pi_half, k, params, h)
}

fn residual_with_sigma(
    sig: &[f64],
    pi: &[f64],
    pi_half: &[f64],
    k: f64,
    params: &MarketParams,
    h: f64,
) -> Vec<f64> {
    let n = pi.len() - 1;
    let h2 = 2.0 * h * h;
    let h4 = 4.0 * h;
    let inv_k = 1.0 / k;
    (1..n)
        .map(|i| {
            let lo = sig[i] / h4 - sig[i - 1] / h2;
            let up = -sig[i] / h4 - sig[i] / h2;
            let diag = inv_k + params.rate + (sig[i] + sig[i - 1]) / h2;
            lo * pi[i - 1] + diag * pi[i] + up * pi[i + 1] - pi_half[i] * inv_k
        })
        .collect()
}

/// Thomas algorithm (forward elimination, back substitution, no pivoting).
pub fn solve_tridiagonal(sys: &TridiagonalSystem) -> Result<Vec<f64>, SchemeError> {
    let n = sys.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let row_scale = |r: usize| sys.lower[r].abs() + sys.diag[r].abs() + sys.upper[r].abs();

    let mut pivot = sys.diag[0];
    check_pivot(0, pivot, row_scale(0))?;
    c[0] = sys.upper[0] / pivot;
    d[0] = sys.rhs[0] / pivot;
    for r in 1..n {
        pivot = sys.diag[r] - sys.lower[r] * c[r - 1];
        check_pivot(r, pivot, row_scale(r))?;
        c[r] = if r + 1 < n { sys.upper[r] / pivot } else { 0.0 };
        d[r] = (sys.rhs[r] - sys.lower[r] * d[r - 1]) / pivot;
    }

    let mut u = d;
    for r in (0..n - 1).rev() {
        u[r] -= c[r] * u[r + 1];
    }
    Ok(u)
}

fn check_pivot(row: usize, pivot: f64, scale: f64) -> Result<(), SchemeError> {
    if !pivot.is_finite() || pivot.abs() < 1e-14 * scale || pivot == 0.0 {
        return Err(SchemeError::NotDiagonallyDominant { row, pivot, scale });
    }
    Ok(())
}
