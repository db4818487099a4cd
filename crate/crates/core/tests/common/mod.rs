#![allow(dead_code)]

use std::sync::Arc;

use frontfix::scheme::{Solution, TridiagonalSystem};
use frontfix::volatility::{DEFAULT_NODE_COUNT, DEFAULT_SEED_X, DEFAULT_X_MAX};
use frontfix::{
    build_psi_table, solve_boundary, BarlesSonerVol, ConstantVol, GridSpec, IterationConfig,
    MarketParams, PsiTable, Volatility,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SIGMA_HAT: f64 = 0.2;

pub fn reference_params() -> MarketParams {
    MarketParams::new(10.0, 1.0, 0.1, 0.05).unwrap()
}

pub fn grid(n: usize, m: usize) -> GridSpec {
    GridSpec::new(3.0, n, m).unwrap()
}

pub fn psi_table() -> Arc<PsiTable> {
    Arc::new(build_psi_table(DEFAULT_X_MAX, DEFAULT_NODE_COUNT, DEFAULT_SEED_X).unwrap())
}

/// Constant σ̂ for a = 0, Barles–Soner otherwise.
pub fn model(a: f64) -> Volatility {
    if a == 0.0 {
        Volatility::Constant(ConstantVol::new(SIGMA_HAT).unwrap())
    } else {
        Volatility::BarlesSoner(BarlesSonerVol::new(SIGMA_HAT, a, 0.1, psi_table()).unwrap())
    }
}

pub fn solve(n: usize, m: usize, a: f64) -> Solution {
    solve_boundary(
        &reference_params(),
        &grid(n, m),
        &model(a),
        &IterationConfig::default(),
    )
    .unwrap()
}

/// Config-file text for the reference market, used by CLI tests.
pub fn config_text(n: usize, m: usize, model: &str, extra: &str) -> String {
    format!(
        r#"[market]
strike = 10.0
maturity = 1.0
rate = 0.1
dividend_yield = 0.05

[grid]
length = 3.0
space_steps = {n}
time_steps = {m}

[model]
{model}
{extra}"#
    )
}

/// Gaussian elimination with partial pivoting on the dense matrix.
#[allow(clippy::needless_range_loop)]
pub fn dense_solve(sys: &TridiagonalSystem) -> Vec<f64> {
    let n = sys.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for r in 0..n {
        if r > 0 {
            a[r][r - 1] = sys.lower[r];
        }
        a[r][r] = sys.diag[r];
        if r + 1 < n {
            a[r][r + 1] = sys.upper[r];
        }
        a[r][n] = sys.rhs[r];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..=n {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    x
}

pub fn random_dominant_system(rng: &mut ChaCha8Rng, n: usize) -> TridiagonalSystem {
    let mut lower = vec![0.0_f64; n];
    let mut upper = vec![0.0_f64; n];
    for r in 0..n {
        if r > 0 {
            lower[r] = rng.gen_range(-1.0..1.0);
        }
        if r + 1 < n {
            upper[r] = rng.gen_range(-1.0..1.0);
        }
    }
    let diag = (0..n)
        .map(|r| {
            let d = lower[r].abs() + upper[r].abs() + rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                d
            } else {
                -d
            }
        })
        .collect();
    let rhs = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    TridiagonalSystem {
        lower,
        diag,
        upper,
        rhs,
    }
}
