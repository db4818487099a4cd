//! The `solve`, `validate` and `psi-table` commands.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde_json::json;

use crate::error::SchemeError;
use crate::model::{price_from_pi, x_to_s, GridSpec, TransformedState};
use crate::oracle::{binomial_boundary, BinomialSpec};
use crate::scheme::{solve_boundary_with, Solution};
use crate::volatility::{build_psi_table, DEFAULT_SEED_X};

use super::config::RunConfig;
use super::output::{csv_text, snapshot_name, write_atomic};
use super::CliError;

/// Smallest lattice accepted for validation.
pub const MIN_LATTICE_STEPS: usize = 100;

fn scheme_error(e: SchemeError) -> CliError {
    match e {
        SchemeError::NonConvergence { .. } => CliError::NonConvergence(e),
        SchemeError::InvalidConfig(msg) => CliError::Config(msg),
        other => CliError::Solver(other),
    }
}

/// Level index nearest to `tau`.
fn nearest_level(tau: f64, grid: &GridSpec, maturity: f64) -> usize {
    ((tau / grid.k(maturity)).round() as usize).min(grid.time_steps)
}

/// Runs the march, keeping copies of the levels in `keep`.
fn march(
    cfg: &RunConfig,
    keep: &[usize],
) -> Result<(Solution, BTreeMap<usize, TransformedState>, f64), CliError> {
    let params = cfg.market()?;
    let grid = cfg.grid()?;
    let model = cfg.volatility()?;
    let mut kept = BTreeMap::new();
    let start = Instant::now();
    let solution = solve_boundary_with(&params, &grid, &model, &cfg.iteration, |j, state| {
        if keep.contains(&j) {
            kept.insert(j, state.clone());
        }
    })
    .map_err(scheme_error)?;
    Ok((solution, kept, start.elapsed().as_secs_f64()))
}

/// Summary printed by `solve`.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub final_rho: f64,
    pub levels: usize,
    pub nonconverged: usize,
    pub wall_seconds: f64,
}

/// Solves the configured problem and writes boundary.csv, diagnostics.json
/// and the requested Π snapshots into `out`.
pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<SolveSummary, CliError> {
    let params = cfg.market()?;
    let grid = cfg.grid()?;
    let t = params.maturity;
    let mut snapshots: Vec<usize> = Vec::new();
    for &tau in &cfg.outputs.snapshot_taus {
        let j = nearest_level(tau, &grid, t);
        let snapped = grid.tau(j, t);
        if snapped != tau {
            info!("snapshot tau = {tau} snapped to level {j} (tau = {snapped})");
        }
        if !snapshots.contains(&j) {
            snapshots.push(j);
        }
    }

    let (solution, kept, wall_seconds) = march(cfg, &snapshots)?;
    let curve = &solution.curve;
    let m = grid.time_steps;

    let stride = cfg.outputs.boundary_stride;
    let rows: Vec<[f64; 2]> = (0..=m)
        .filter(|&j| j % stride == 0 || j == m)
        .map(|j| [curve.taus[j], curve.rhos[j]])
        .collect();
    write_atomic(
        &out.join("boundary.csv"),
        csv_text(&["tau", "rho"], rows.iter().map(|r| r.as_slice())).as_bytes(),
    )?;

    let diags = &solution.diagnostics;
    let report = json!({
        "iterations_used": diags.iter().map(|d| d.iterations_used).collect::<Vec<_>>(),
        "final_residual": diags.iter().map(|d| d.final_residual).collect::<Vec<_>>(),
        "gamma_clamp_count": diags.iter().map(|d| d.gamma_clamp_count).collect::<Vec<_>>(),
        "converged": diags.iter().map(|d| d.converged).collect::<Vec<_>>(),
        "nonconverged_levels": solution.nonconverged_levels(),
        "wall_seconds": wall_seconds,
        "config_echo": cfg,
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&out.join("diagnostics.json"), text.as_bytes())?;

    for (&j, state) in &kept {
        let mut rows = Vec::with_capacity(grid.space_steps + 1);
        for (i, &pi) in state.pi.iter().enumerate() {
            let x = grid.x(i);
            let s = x_to_s(x, state.rho);
            let v =
                price_from_pi(state, &params, &grid, s).map_err(|e| CliError::Solver(e.into()))?;
            rows.push([x, s, pi, v]);
        }
        let text = csv_text(&["x", "S", "pi", "V"], rows.iter().map(|r| r.as_slice()));
        write_atomic(&out.join(snapshot_name(grid.tau(j, t))), text.as_bytes())?;
    }

    Ok(SolveSummary {
        final_rho: solution.final_state.rho,
        levels: m,
        nonconverged: solution.nonconverged_levels(),
        wall_seconds,
    })
}

/// One row of validation.csv.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRow {
    pub tau: f64,
    pub rho_pde: f64,
    pub rho_binomial: f64,
    pub rel_error: f64,
}

/// Outcome of `validate`.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    /// Largest relative error over τ ∈ [0.05T, T].
    pub max_rel_error: f64,
}

/// Levels compared against the lattice: `samples` evenly spaced levels in
/// (0, m], plus the level nearest 0.05T.
pub fn validation_levels(grid: &GridSpec, maturity: f64, samples: usize) -> Vec<usize> {
    let m = grid.time_steps;
    let mut levels: Vec<usize> = (1..=samples)
        .map(|i| ((i as f64 * m as f64 / samples as f64).round() as usize).max(1))
        .collect();
    levels.push(nearest_level(0.05 * maturity, grid, maturity).max(1));
    levels.sort_unstable();
    levels.dedup();
    levels
}

/// Compares the PDE boundary with the CRR lattice on a shared τ-grid.
pub fn run_validate(
    cfg: &RunConfig,
    lattice_steps: usize,
    out: &Path,
) -> Result<ValidationReport, CliError> {
    if !cfg.model.is_linear() {
        return Err(CliError::Config(
            "validate needs the constant model or barles_soner with a = 0; no lattice oracle exists for a > 0".into(),
        ));
    }
    if lattice_steps < MIN_LATTICE_STEPS {
        return Err(CliError::Config(format!(
            "lattice steps must be at least {MIN_LATTICE_STEPS}"
        )));
    }
    let params = cfg.market()?;
    let grid = cfg.grid()?;
    let t = params.maturity;
    let spec = BinomialSpec::new(lattice_steps, params, cfg.model.sigma_hat())
        .map_err(CliError::Oracle)?;

    let (solution, _, _) = march(cfg, &[])?;
    let levels = validation_levels(&grid, t, cfg.outputs.validation_samples);
    let rows = levels
        .par_iter()
        .map(|&j| {
            let tau = grid.tau(j, t);
            let rho_pde = solution.curve.rhos[j];
            let rho_binomial =
                binomial_boundary(&spec, (t - tau).max(0.0)).map_err(CliError::Oracle)?;
            Ok(ValidationRow {
                tau,
                rho_pde,
                rho_binomial,
                rel_error: (rho_pde - rho_binomial).abs() / rho_binomial,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let text = csv_text(
        &["tau", "rho_pde", "rho_binomial", "rel_error"],
        rows.iter()
            .map(|r| [r.tau, r.rho_pde, r.rho_binomial, r.rel_error])
            .collect::<Vec<_>>()
            .iter()
            .map(|r| r.as_slice()),
    );
    write_atomic(&out.join("validation.csv"), text.as_bytes())?;

    let window_start = nearest_level(0.05 * t, &grid, t);
    let max_rel_error = levels
        .iter()
        .zip(&rows)
        .filter(|(&j, _)| j >= window_start)
        .map(|(_, r)| r.rel_error)
        .fold(0.0, f64::max);
    Ok(ValidationReport {
        rows,
        max_rel_error,
    })
}

/// Writes the Ψ table on [0, x_max] as `x,psi`.
pub fn run_psi_table(x_max: f64, nodes: usize, out: &Path) -> Result<usize, CliError> {
    let table = build_psi_table(x_max, nodes, DEFAULT_SEED_X)?;
    let text = csv_text(
        &["x", "psi"],
        table
            .nodes()
            .iter()
            .zip(table.values())
            .map(|(&x, &p)| [x, p])
            .collect::<Vec<_>>()
            .iter()
            .map(|r| r.as_slice()),
    );
    write_atomic(out, text.as_bytes())?;
    Ok(table.nodes().len())
}
