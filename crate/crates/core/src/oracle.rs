//! Cox–Ross–Rubinstein lattice for American calls with a continuous
//! dividend yield. Shares no code with the PDE scheme.

use crate::error::OracleError;
use crate::model::MarketParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialSpec {
    pub steps: usize,
    pub params: MarketParams,
    pub sigma: f64,
}

impl BinomialSpec {
    pub fn new(steps: usize, params: MarketParams, sigma: f64) -> Result<Self, OracleError> {
        if steps == 0 {
            return Err(OracleError::InvalidSpec("steps must be positive".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(OracleError::InvalidSpec("sigma must be positive".into()));
        }
        if !(params.strike > 0.0 && params.maturity > 0.0) {
            return Err(OracleError::InvalidSpec(
                "strike and maturity must be positive".into(),
            ));
        }
        Ok(Self {
            steps,
            params,
            sigma,
        })
    }
}

struct Lattice {
    up: f64,
    p_up: f64,
    discount: f64,
}

impl Lattice {
    fn new(spec: &BinomialSpec, horizon: f64) -> Result<Self, OracleError> {
        let dt = horizon / spec.steps as f64;
        let up = (spec.sigma * dt.sqrt()).exp();
        let down = 1.0 / up;
        let growth = ((spec.params.rate - spec.params.dividend_yield) * dt).exp();
        let p_up = (growth - down) / (up - down);
        if !(0.0..=1.0).contains(&p_up) {
            return Err(OracleError::InvalidProbability { p: p_up });
        }
        Ok(Self {
            up,
            p_up,
            discount: (-spec.params.rate * dt).exp(),
        })
    }

    /// Continuation value at the root (no exercise comparison at the root
    /// itself) and the intrinsic value there.
    fn root_values(&self, steps: usize, s0: f64, strike: f64) -> (f64, f64) {
        let n = steps;
        // node (level, j) holds s0·u^{2j − level}
        let mut values: Vec<f64> = (0..=n)
            .map(|j| (s0 * self.up.powi(2 * j as i32 - n as i32) - strike).max(0.0))
            .collect();
        let pu = self.p_up * self.discount;
        let pd = (1.0 - self.p_up) * self.discount;
        let u2 = self.up * self.up;
        for level in (1..n).rev() {
            let mut s = s0 * self.up.powi(-(level as i32));
            for j in 0..=level {
                let cont = pu * values[j + 1] + pd * values[j];
                values[j] = cont.max(s - strike);
                s *= u2;
            }
        }
        let cont = pu * values[1] + pd * values[0];
        (cont, s0 - strike)
    }
}

/// Price at calendar time `t` of the American call with spot `s0`.
pub fn binomial_price(spec: &BinomialSpec, s0: f64, t: f64) -> Result<f64, OracleError> {
    let (cont, intrinsic) = continuation(spec, s0, t)?;
    Ok(cont.max(intrinsic).max(0.0))
}

fn continuation(spec: &BinomialSpec, s0: f64, t: f64) -> Result<(f64, f64), OracleError> {
    let horizon = spec.params.maturity - t;
    if horizon.is_nan() || horizon <= 0.0 || t < 0.0 {
        return Err(OracleError::InvalidSpec(format!("t = {t} outside [0, T)")));
    }
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(OracleError::InvalidSpec(format!(
            "spot {s0} must be positive"
        )));
    }
    let lattice = Lattice::new(spec, horizon)?;
    Ok(lattice.root_values(spec.steps, s0, spec.params.strike))
}

/// Early exercise boundary S_f(t): the smallest spot at which holding is
/// worth no more than exercising.
///
/// The crossing is bracketed by stepping the spot up geometrically from
/// max(E, rE/q), the boundary's limit at expiry, and then refined by
/// bisection to a relative width of 1e-7.
pub fn binomial_boundary(spec: &BinomialSpec, t: f64) -> Result<f64, OracleError> {
    let strike = spec.params.strike;
    let exercises = |s: f64| -> Result<bool, OracleError> {
        let (cont, intrinsic) = continuation(spec, s, t)?;
        Ok(intrinsic > 0.0 && cont <= intrinsic)
    };
    let ratio = 1.05;
    let cap = strike * 1e6;
    let mut lo = strike;
    if exercises(lo)? {
        return Ok(lo);
    }
    let q = spec.params.dividend_yield;
    let expiry_limit = if q > 0.0 {
        strike * (spec.params.rate / q).max(1.0)
    } else {
        strike
    };
    let mut hi = if expiry_limit > lo && exercises(expiry_limit)? {
        expiry_limit
    } else {
        lo = lo.max(expiry_limit);
        let mut hi = lo * ratio;
        while !exercises(hi)? {
            lo = hi;
            hi *= ratio;
            if hi > cap {
                return Err(OracleError::NoExerciseRegion { t });
            }
        }
        hi
    };
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if exercises(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-7 * hi {
            break;
        }
    }
    Ok(hi)
}
