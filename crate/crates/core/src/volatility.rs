//! Volatility models σ²(Γ, S, τ) and the Barles–Soner Ψ function.
//!
//! Ψ solves the singular ODE
//!
//!   Ψ'(x) = (Ψ(x) + 1) / (2√(xΨ(x)) − x),   Ψ(0) = 0,
//!
//! and behaves like (3/2)^{2/3} x^{1/3} near the origin and like x for large
//! x. The table is built by integrating forward from a small seed placed on
//! the leading-order branch; trajectories off that branch decay like
//! x^{-1/2}, so the seed error does not grow.

use std::sync::Arc;

use crate::error::VolatilityError;

/// Below this magnitude the ODE denominator is treated as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

pub const DEFAULT_SEED_X: f64 = 1e-8;
pub const DEFAULT_X_MAX: f64 = 1e4;
pub const DEFAULT_NODE_COUNT: usize = 4001;

/// Leading coefficient of the small-x expansion Ψ(x) ≈ c·x^{1/3}.
pub fn small_x_coefficient() -> f64 {
    1.5_f64.powf(2.0 / 3.0)
}

/// Right-hand side of the Ψ ODE.
pub fn psi_ode_rhs(x: f64, psi: f64) -> Result<f64, VolatilityError> {
    let denom = 2.0 * (x * psi).sqrt() - x;
    if !denom.is_finite() || denom.abs() < SINGULAR_THRESHOLD {
        return Err(VolatilityError::SingularDenominator { x, psi });
    }
    Ok((psi + 1.0) / denom)
}

/// Tabulated Ψ on `[0, x_max]` with linear extrapolation beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTable {
    nodes: Vec<f64>,
    values: Vec<f64>,
    x_max: f64,
    linear_slope: f64,
}

impl PsiTable {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn linear_slope(&self) -> f64 {
        self.linear_slope
    }

    /// Ψ(x). Piecewise linear on the table, linear beyond `x_max`, and
    /// clamped to zero for negative arguments.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.x_max {
            let last = self.values[self.values.len() - 1];
            return last + self.linear_slope * (x - self.x_max);
        }
        // first node strictly greater than x; x > 0 = nodes[0] so idx >= 1
        let idx = self.nodes.partition_point(|&n| n <= x);
        let (x0, x1) = (self.nodes[idx - 1], self.nodes[idx]);
        let (y0, y1) = (self.values[idx - 1], self.values[idx]);
        let w = (x - x0) / (x1 - x0);
        y0 + w * (y1 - y0)
    }

    /// Slope of the interpolant at x (the right-hand segment at nodes),
    /// zero for negative arguments.
    pub fn derivative(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x >= self.x_max {
            return self.linear_slope;
        }
        let idx = self.nodes.partition_point(|&n| n <= x);
        (self.values[idx] - self.values[idx - 1]) / (self.nodes[idx] - self.nodes[idx - 1])
    }

    /// ODE residuals |Ψ' − f(x, Ψ)| at the nodes of the integrated part,
    /// with Ψ' from the three-point centered difference on the (nonuniform)
    /// nodes. The origin is excluded from the stencils because Ψ' is
    /// unbounded there. Each entry is `(x, absolute, relative)`.
    pub fn ode_residuals(&self) -> Vec<(f64, f64, f64)> {
        (2..self.nodes.len() - 1)
            .map(|i| {
                let (xm, x, xp) = (self.nodes[i - 1], self.nodes[i], self.nodes[i + 1]);
                let (ym, y, yp) = (self.values[i - 1], self.values[i], self.values[i + 1]);
                let h1 = x - xm;
                let h2 = xp - x;
                let deriv =
                    (h1 * h1 * yp - h2 * h2 * ym - (h1 * h1 - h2 * h2) * y) / (h1 * h2 * (h1 + h2));
                match psi_ode_rhs(x, y) {
                    Ok(rhs) => {
                        let abs = (deriv - rhs).abs();
                        (x, abs, abs / rhs.abs().max(f64::MIN_POSITIVE))
                    }
                    Err(_) => (x, f64::INFINITY, f64::INFINITY),
                }
            })
            .collect()
    }
}

/// Integrates the Ψ ODE from `seed_x` to `x_max` and tabulates the solution
/// at logarithmically spaced nodes, with the exact node (0, 0) prepended.
///
/// `node_count` counts the origin, so the integrated part holds
/// `node_count - 1` nodes from `seed_x` to `x_max`.
pub fn build_psi_table(
    x_max: f64,
    node_count: usize,
    seed_x: f64,
) -> Result<PsiTable, VolatilityError> {
    if !(seed_x > 0.0 && x_max > seed_x && x_max.is_finite()) || node_count < 3 {
        return Err(VolatilityError::InvalidTableSpec {
            x_max,
            node_count,
            seed_x,
        });
    }
    let t_start = seed_x.ln();
    let t_end = x_max.ln();
    let intervals = node_count - 2;
    let dt = (t_end - t_start) / intervals as f64;

    let mut nodes = Vec::with_capacity(node_count);
    let mut values = Vec::with_capacity(node_count);
    nodes.push(0.0);
    values.push(0.0);

    let mut psi = small_x_coefficient() * seed_x.cbrt();
    nodes.push(seed_x);
    values.push(psi);

    let mut integrator = DormandPrince::new(1e-12, 1e-14);
    let mut t = t_start;
    for j in 1..=intervals {
        let t_next = if j == intervals {
            t_end
        } else {
            t_start + j as f64 * dt
        };
        psi = integrator.advance(t, t_next, psi)?;
        t = t_next;
        nodes.push(if j == intervals { x_max } else { t.exp() });
        values.push(psi);
    }

    let n = nodes.len();
    let linear_slope = (values[n - 1] - values[n - 2]) / (nodes[n - 1] - nodes[n - 2]);
    Ok(PsiTable {
        nodes,
        values,
        x_max,
        linear_slope,
    })
}

/// Ψ ODE written in t = ln x: dΨ/dt = x·Ψ'(x).
fn log_rhs(t: f64, psi: f64) -> Result<f64, VolatilityError> {
    let x = t.exp();
    Ok(x * psi_ode_rhs(x, psi)?)
}

/// Adaptive Dormand–Prince 5(4) stepper for the scalar log-variable ODE.
struct DormandPrince {
    rtol: f64,
    atol: f64,
    step: f64,
}

impl DormandPrince {
    const MAX_STEPS: usize = 100_000;
    const MIN_STEP: f64 = 1e-14;

    fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            step: 1e-3,
        }
    }

    fn advance(&mut self, t0: f64, t1: f64, y0: f64) -> Result<f64, VolatilityError> {
        const C2: f64 = 1.0 / 5.0;
        const C3: f64 = 3.0 / 10.0;
        const C4: f64 = 4.0 / 5.0;
        const C5: f64 = 8.0 / 9.0;
        const A21: f64 = 1.0 / 5.0;
        const A31: f64 = 3.0 / 40.0;
        const A32: f64 = 9.0 / 40.0;
        const A41: f64 = 44.0 / 45.0;
        const A42: f64 = -56.0 / 15.0;
        const A43: f64 = 32.0 / 9.0;
        const A51: f64 = 19372.0 / 6561.0;
        const A52: f64 = -25360.0 / 2187.0;
        const A53: f64 = 64448.0 / 6561.0;
        const A54: f64 = -212.0 / 729.0;
        const A61: f64 = 9017.0 / 3168.0;
        const A62: f64 = -355.0 / 33.0;
        const A63: f64 = 46732.0 / 5247.0;
        const A64: f64 = 49.0 / 176.0;
        const A65: f64 = -5103.0 / 18656.0;
        const B1: f64 = 35.0 / 384.0;
        const B3: f64 = 500.0 / 1113.0;
        const B4: f64 = 125.0 / 192.0;
        const B5: f64 = -2187.0 / 6784.0;
        const B6: f64 = 11.0 / 84.0;
        // error weights: 5th-order minus embedded 4th-order
        const E1: f64 = 71.0 / 57600.0;
        const E3: f64 = -71.0 / 16695.0;
        const E4: f64 = 71.0 / 1920.0;
        const E5: f64 = -17253.0 / 339200.0;
        const E6: f64 = 22.0 / 525.0;
        const E7: f64 = -1.0 / 40.0;

        let mut t = t0;
        let mut y = y0;
        let fail = |t: f64| VolatilityError::IntegrationFailure { x: t.exp() };
        for _ in 0..Self::MAX_STEPS {
            let remaining = t1 - t;
            if remaining <= 0.0 {
                return Ok(y);
            }
            let h = self.step.min(remaining);
            let k1 = log_rhs(t, y)?;
            let k2 = log_rhs(t + C2 * h, y + h * A21 * k1)?;
            let k3 = log_rhs(t + C3 * h, y + h * (A31 * k1 + A32 * k2))?;
            let k4 = log_rhs(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
            let k5 = log_rhs(
                t + C5 * h,
                y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
            )?;
            let k6 = log_rhs(
                t + h,
                y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
            )?;
            let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
            let k7 = log_rhs(t + h, y_new)?;
            let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
            let scale = self.atol + self.rtol * y.abs().max(y_new.abs());
            let ratio = err.abs() / scale;
            if !ratio.is_finite() || !y_new.is_finite() {
                return Err(fail(t));
            }
            let factor = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            if ratio <= 1.0 {
                t += h;
                y = y_new;
                // keep the growth from being capped by a short final step
                if h == self.step || factor < 1.0 {
                    self.step = h * factor;
                }
            } else {
                self.step = h * factor;
                if self.step < Self::MIN_STEP {
                    return Err(fail(t));
                }
            }
        }
        Err(fail(t))
    }
}

/// σ²(Γ, S, τ) for a volatility model; Γ stands for S²∂²V/∂S².
pub trait VolatilityModel: Send + Sync {
    fn sigma_sq(&self, gamma: f64, s: f64, tau: f64) -> f64;

    /// True when evaluating at `gamma` hits the negative-argument clamp.
    fn clamps(&self, _gamma: f64, _tau: f64) -> bool {
        false
    }

    /// ∂σ²/∂Γ, used by the Newton linearization of the diffusion step.
    fn d_sigma_sq_d_gamma(&self, _gamma: f64, _s: f64, _tau: f64) -> f64 {
        0.0
    }

    /// The constant volatility σ̂ this model reduces to when Γ = 0.
    fn base_sigma(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVol {
    pub sigma_hat: f64,
}

impl ConstantVol {
    pub fn new(sigma_hat: f64) -> Result<Self, VolatilityError> {
        if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
            return Err(VolatilityError::InvalidParameter(
                "sigma_hat must be positive",
            ));
        }
        Ok(Self { sigma_hat })
    }
}

impl VolatilityModel for ConstantVol {
    fn sigma_sq(&self, _gamma: f64, _s: f64, _tau: f64) -> f64 {
        self.sigma_hat * self.sigma_hat
    }

    fn base_sigma(&self) -> f64 {
        self.sigma_hat
    }
}

/// Barles–Soner: σ² = σ̂²(1 + Ψ(a² e^{rτ} Γ)).
#[derive(Debug, Clone)]
pub struct BarlesSonerVol {
    pub sigma_hat: f64,
    pub a: f64,
    pub r: f64,
    psi: Arc<PsiTable>,
}

impl BarlesSonerVol {
    pub fn new(
        sigma_hat: f64,
        a: f64,
        r: f64,
        psi: Arc<PsiTable>,
    ) -> Result<Self, VolatilityError> {
        if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
            return Err(VolatilityError::InvalidParameter(
                "sigma_hat must be positive",
            ));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(VolatilityError::InvalidParameter("a must be nonnegative"));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(VolatilityError::InvalidParameter("r must be positive"));
        }
        Ok(Self {
            sigma_hat,
            a,
            r,
            psi,
        })
    }

    pub fn psi_table(&self) -> &PsiTable {
        &self.psi
    }

    fn psi_argument(&self, gamma: f64, tau: f64) -> f64 {
        self.a * self.a * (self.r * tau).exp() * gamma
    }
}

impl VolatilityModel for BarlesSonerVol {
    fn sigma_sq(&self, gamma: f64, _s: f64, tau: f64) -> f64 {
        let base = self.sigma_hat * self.sigma_hat;
        if self.a == 0.0 {
            return base;
        }
        base * (1.0 + self.psi.eval(self.psi_argument(gamma, tau)))
    }

    fn clamps(&self, gamma: f64, _tau: f64) -> bool {
        self.a > 0.0 && gamma < 0.0
    }

    fn d_sigma_sq_d_gamma(&self, gamma: f64, _s: f64, tau: f64) -> f64 {
        if self.a == 0.0 {
            return 0.0;
        }
        let scale = self.a * self.a * (self.r * tau).exp();
        self.sigma_hat * self.sigma_hat * scale * self.psi.derivative(scale * gamma)
    }

    fn base_sigma(&self) -> f64 {
        self.sigma_hat
    }
}

/// Runtime selection between the supported models.
#[derive(Debug, Clone)]
pub enum Volatility {
    Constant(ConstantVol),
    BarlesSoner(BarlesSonerVol),
}

impl Volatility {
    /// Whether this model has no nonlinear dependence on Γ.
    pub fn is_linear(&self) -> bool {
        match self {
            Volatility::Constant(_) => true,
            Volatility::BarlesSoner(bs) => bs.a == 0.0,
        }
    }
}

impl VolatilityModel for Volatility {
    fn sigma_sq(&self, gamma: f64, s: f64, tau: f64) -> f64 {
        match self {
            Volatility::Constant(m) => m.sigma_sq(gamma, s, tau),
            Volatility::BarlesSoner(m) => m.sigma_sq(gamma, s, tau),
        }
    }

    fn clamps(&self, gamma: f64, tau: f64) -> bool {
        match self {
            Volatility::Constant(m) => m.clamps(gamma, tau),
            Volatility::BarlesSoner(m) => m.clamps(gamma, tau),
        }
    }

    fn d_sigma_sq_d_gamma(&self, gamma: f64, s: f64, tau: f64) -> f64 {
        match self {
            Volatility::Constant(m) => m.d_sigma_sq_d_gamma(gamma, s, tau),
            Volatility::BarlesSoner(m) => m.d_sigma_sq_d_gamma(gamma, s, tau),
        }
    }

    fn base_sigma(&self) -> f64 {
        match self {
            Volatility::Constant(m) => m.base_sigma(),
            Volatility::BarlesSoner(m) => m.base_sigma(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn table() -> &'static PsiTable {
        static TABLE: OnceLock<PsiTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            build_psi_table(DEFAULT_X_MAX, DEFAULT_NODE_COUNT, DEFAULT_SEED_X).unwrap()
        })
    }

    fn barles_soner(a: f64) -> BarlesSonerVol {
        BarlesSonerVol::new(0.2, a, 0.1, Arc::new(table().clone())).unwrap()
    }

    #[test]
    fn rhs_direct_substitution() {
        assert_eq!(psi_ode_rhs(1.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn rhs_zero_denominator() {
        assert!(matches!(
            psi_ode_rhs(4.0, 1.0),
            Err(VolatilityError::SingularDenominator { .. })
        ));
    }

    #[test]
    fn rhs_matches_series_derivative_near_zero() {
        let c = small_x_coefficient();
        let x = 1e-9_f64;
        let rhs = psi_ode_rhs(x, c * x.cbrt()).unwrap();
        let series = c / 3.0 * x.powf(-2.0 / 3.0);
        assert!((rhs / series - 1.0).abs() < 0.01, "{rhs} vs {series}");
    }

    #[test]
    fn small_x_coefficient_balances_leading_order() {
        // c/3 = 1/(2√c)
        let c = small_x_coefficient();
        assert_relative_eq!(c / 3.0, 1.0 / (2.0 * c.sqrt()), max_relative = 1e-14);
    }

    #[test]
    fn table_origin_and_monotonicity() {
        let t = table();
        assert_eq!(t.nodes()[0], 0.0);
        assert_eq!(t.values()[0], 0.0);
        assert_eq!(t.eval(0.0), 0.0);
        assert!(t.values().windows(2).all(|w| w[1] > w[0]));
        assert!(t.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn table_satisfies_ode() {
        let residuals = table().ode_residuals();
        assert_eq!(residuals.len(), DEFAULT_NODE_COUNT - 3);
        for (x, abs, rel) in residuals {
            assert!(
                abs <= 1e-6 || rel <= 1e-4,
                "x = {x}: abs {abs:e}, rel {rel:e}"
            );
        }
    }

    #[test]
    fn large_x_ratio_is_finite_and_positive() {
        let t = table();
        let ratio = t.eval(t.x_max()) / t.x_max();
        assert!(ratio.is_finite() && ratio > 0.0);
        // Ψ(x) = x + ln x + O(1) for large x
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
        assert!((t.linear_slope() - 1.0).abs() < 0.01);
    }

    #[test]
    fn eval_clamps_negative_and_interpolates() {
        let t = table();
        assert_eq!(t.eval(-1.0), 0.0);
        let i = 1500;
        let mid = 0.5 * (t.nodes()[i] + t.nodes()[i + 1]);
        let mean = 0.5 * (t.values()[i] + t.values()[i + 1]);
        assert_relative_eq!(t.eval(mid), mean, max_relative = 1e-14);
        assert_eq!(t.eval(t.nodes()[i]), t.values()[i]);
    }

    #[test]
    fn eval_extrapolates_linearly() {
        let t = table();
        let x = 2.0 * t.x_max();
        let expected = t.values().last().unwrap() + t.linear_slope() * t.x_max();
        assert_relative_eq!(t.eval(x), expected, max_relative = 1e-14);
    }

    #[test]
    fn derivative_matches_segment_slopes() {
        let t = table();
        let i = 2000;
        let x = 0.5 * (t.nodes()[i] + t.nodes()[i + 1]);
        let slope = (t.values()[i + 1] - t.values()[i]) / (t.nodes()[i + 1] - t.nodes()[i]);
        assert_eq!(t.derivative(x), slope);
        assert_eq!(t.derivative(-1.0), 0.0);
        assert_eq!(t.derivative(2.0 * t.x_max()), t.linear_slope());
        let m = barles_soner(0.15);
        let g = 37.0;
        let fd = (m.sigma_sq(g + 1e-6, 1.0, 0.4) - m.sigma_sq(g - 1e-6, 1.0, 0.4)) / 2e-6;
        assert_relative_eq!(m.d_sigma_sq_d_gamma(g, 1.0, 0.4), fd, max_relative = 1e-6);
    }

    #[test]
    fn invalid_table_spec_rejected() {
        assert!(build_psi_table(1e4, 2, 1e-8).is_err());
        assert!(build_psi_table(1e-9, 100, 1e-8).is_err());
        assert!(build_psi_table(1e4, 100, 0.0).is_err());
    }

    #[test]
    fn barles_soner_reduces_to_constant() {
        let m = barles_soner(0.0);
        for &(g, s, tau) in &[(0.0, 1.0, 0.0), (50.0, 12.0, 0.7), (-3.0, 5.0, 1.0)] {
            assert_eq!(m.sigma_sq(g, s, tau), 0.2 * 0.2);
        }
        let m = barles_soner(0.15);
        assert_eq!(m.sigma_sq(0.0, 20.0, 0.5), 0.2 * 0.2);
        assert_eq!(
            ConstantVol::new(0.2).unwrap().sigma_sq(7.0, 3.0, 0.2),
            0.2 * 0.2
        );
    }

    #[test]
    fn clamp_flag() {
        let m = barles_soner(0.15);
        assert!(m.clamps(-1.0, 0.0));
        assert!(!m.clamps(1.0, 0.0));
        assert!(!barles_soner(0.0).clamps(-1.0, 0.0));
        assert_eq!(m.sigma_sq(-10.0, 1.0, 0.3), 0.2 * 0.2);
    }

    proptest! {
        #[test]
        fn sigma_sq_monotone_in_gamma(g1 in 0.0..500.0f64, dg in 0.0..500.0f64, tau in 0.0..1.0f64) {
            let m = barles_soner(0.15);
            let lo = m.sigma_sq(g1, 10.0, tau);
            let hi = m.sigma_sq(g1 + dg, 10.0, tau);
            prop_assert!(lo <= hi);
            prop_assert!(lo >= 0.04 - 1e-15);
        }

        #[test]
        fn sigma_sq_monotone_in_tau(g in 1e-6..500.0f64, t1 in 0.0..1.0f64, dt in 0.0..1.0f64) {
            let m = barles_soner(0.15);
            prop_assert!(m.sigma_sq(g, 10.0, t1) <= m.sigma_sq(g, 10.0, t1 + dt));
        }
    }
}
