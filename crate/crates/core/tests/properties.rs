//! Properties of the solver output at desk resolution (n = 200, m = 2000).

mod common;

use std::sync::OnceLock;

use frontfix::scheme::{pointwise_constraint_defect, Solution};
use frontfix::{
    binomial_boundary, binomial_price, price_from_pi, solve_boundary_with, x_to_s, BinomialSpec,
    IterationConfig,
};

const N: usize = 200;
const M: usize = 2000;
const TOL_D: f64 = 1e-3 * 10.0;

/// Per-level observations collected during the march.
#[derive(Default)]
struct LevelChecks {
    dirichlet_violations: usize,
    range_violations: usize,
    monotonicity_violations: usize,
    levels_seen: usize,
}

struct Run {
    solution: Solution,
    checks: LevelChecks,
}

fn run(a: f64) -> Run {
    let params = common::reference_params();
    let grid = common::grid(N, M);
    let mut checks = LevelChecks::default();
    let solution = solve_boundary_with(
        &params,
        &grid,
        &common::model(a),
        &IterationConfig::default(),
        |_, st| {
            checks.levels_seen += 1;
            if st.pi[0] != -10.0 || st.pi[N] != 0.0 {
                checks.dirichlet_violations += 1;
            }
            if st.pi.iter().any(|v| !(-10.0 - TOL_D..=TOL_D).contains(v)) {
                checks.range_violations += 1;
            }
            checks.monotonicity_violations +=
                st.pi.windows(2).filter(|w| w[1] < w[0] - TOL_D).count();
        },
    )
    .unwrap();
    Run { solution, checks }
}

fn linear() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(0.0))
}

fn nonlinear() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run(0.15))
}

#[test]
fn profile_invariants_hold_at_every_level() {
    for (name, r) in [("a=0", linear()), ("a=0.15", nonlinear())] {
        let c = &r.checks;
        assert_eq!(c.levels_seen, M + 1, "{name}");
        assert_eq!(c.dirichlet_violations, 0, "{name}");
        assert_eq!(c.range_violations, 0, "{name}");
        assert_eq!(c.monotonicity_violations, 0, "{name}");
    }
}

#[test]
fn boundary_nondecreasing_in_tau() {
    for (name, r) in [("a=0", linear()), ("a=0.15", nonlinear())] {
        let rhos = &r.solution.curve.rhos;
        assert_eq!(rhos[0], 20.0);
        for (j, w) in rhos.windows(2).enumerate() {
            assert!(
                w[1] >= w[0],
                "{name}: rho decreases at level {}: {} -> {}",
                j + 1,
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn every_level_converges_within_budget() {
    let p_max = IterationConfig::default().p_max;
    for (name, r) in [("a=0", linear()), ("a=0.15", nonlinear())] {
        assert_eq!(r.solution.nonconverged_levels(), 0, "{name}");
        assert!(
            r.solution
                .diagnostics
                .iter()
                .all(|d| d.iterations_used <= p_max),
            "{name}"
        );
        assert!(
            r.solution
                .diagnostics
                .iter()
                .all(|d| d.final_residual <= 1e-7),
            "{name}"
        );
    }
}

#[test]
fn residuals_contract_on_almost_all_levels() {
    for (name, r) in [("a=0", linear()), ("a=0.15", nonlinear())] {
        let flagged = r
            .solution
            .diagnostics
            .iter()
            .filter(|d| !d.contracting())
            .count();
        assert!(
            flagged <= M / 100,
            "{name}: {flagged} non-contracting levels"
        );
    }
}

#[test]
fn nonlinear_boundary_dominates_linear() {
    let grid = common::grid(N, M);
    let lin = &linear().solution.curve.rhos;
    let non = &nonlinear().solution.curve.rhos;
    for j in 0..=M {
        if grid.tau(j, 1.0) >= 0.05 {
            assert!(non[j] > lin[j], "level {j}");
        }
    }
    assert!(non[M] - lin[M] > 0.1);
}

#[test]
fn pointwise_constraint_defect_small() {
    let params = common::reference_params();
    let grid = common::grid(N, M);
    for (a, r) in [(0.0, linear()), (0.15, nonlinear())] {
        let d =
            pointwise_constraint_defect(&r.solution.final_state, &common::model(a), &params, &grid);
        assert!(d <= 0.05, "a = {a}: defect {d}");
    }
}

#[test]
fn boundary_close_to_lattice() {
    let spec = BinomialSpec::new(2000, common::reference_params(), common::SIGMA_HAT).unwrap();
    let grid = common::grid(N, M);
    for &j in &[100usize, 1000, 2000] {
        let tau = grid.tau(j, 1.0);
        let reference = binomial_boundary(&spec, 1.0 - tau).unwrap();
        let rho = linear().solution.curve.rhos[j];
        assert!(
            (rho / reference - 1.0).abs() < 0.01,
            "tau {tau}: {rho} vs {reference}"
        );
    }
}

#[test]
fn recovered_price_close_to_lattice() {
    let params = common::reference_params();
    let grid = common::grid(N, M);
    let state = &linear().solution.final_state;
    let spec = BinomialSpec::new(2000, params, common::SIGMA_HAT).unwrap();
    for &s in &[8.0, 10.0, 14.0, 18.0] {
        let v = price_from_pi(state, &params, &grid, s).unwrap();
        let reference = binomial_price(&spec, s, 0.0).unwrap();
        assert!((v - reference).abs() < 0.02, "S = {s}: {v} vs {reference}");
    }
    // at the boundary the price is the exercise value
    let at_rho = price_from_pi(state, &params, &grid, x_to_s(0.0, state.rho)).unwrap();
    assert!((at_rho - (state.rho - 10.0)).abs() < 1e-12);
}

#[test]
fn runs_are_bit_identical() {
    let again = common::solve(N, M, 0.15);
    let first = &nonlinear().solution;
    assert_eq!(again.curve.rhos, first.curve.rhos);
    assert_eq!(again.final_state.pi, first.final_state.pi);
}
