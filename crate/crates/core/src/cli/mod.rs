//! Command-line front end.
//!
//! ```text
//! frontfix solve --config run.toml [--out DIR]
//! frontfix validate --config run.toml --lattice-steps N [--tol X] [--out DIR]
//! frontfix plot --out chart.svg a/boundary.csv b/boundary.csv
//! frontfix psi-table --xmax X --out psi.csv
//! ```

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::error::{OracleError, SchemeError, VolatilityError};
use crate::volatility::DEFAULT_NODE_COUNT;

pub use config::{ModelConfig, OutputConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    NonConvergence(SchemeError),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("solver error: {0}")]
    Solver(SchemeError),
    #[error("lattice error: {0}")]
    Oracle(OracleError),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
            CliError::Validation(_) => 5,
            CliError::Solver(_) | CliError::Oracle(_) => 1,
        }
    }
}

impl From<VolatilityError> for CliError {
    fn from(e: VolatilityError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "frontfix",
    version,
    about = "Early exercise boundary of American calls under nonlinear Black-Scholes models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the boundary and write boundary.csv, diagnostics.json and snapshots.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides outputs.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a constant-volatility run against the binomial lattice.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "lattice-steps")]
        lattice_steps: usize,
        /// Largest accepted relative error over τ ∈ [0.05T, T].
        #[arg(long, default_value_t = 0.02)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render boundary.csv files as an SVG line chart.
    Plot {
        #[arg(long)]
        out: PathBuf,
        files: Vec<PathBuf>,
    },
    /// Tabulate the Barles–Soner function Ψ.
    PsiTable {
        #[arg(long)]
        xmax: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NODE_COUNT)]
        nodes: usize,
    },
}

/// Executes one command, printing a short summary on success.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.outputs.dir.clone());
            let s = commands::run_solve(&cfg, &dir)?;
            println!(
                "rho(T) = {} after {} levels ({} not converged) in {:.2} s; wrote {}",
                s.final_rho,
                s.levels,
                s.nonconverged,
                s.wall_seconds,
                dir.display()
            );
            Ok(())
        }
        Command::Validate {
            config,
            lattice_steps,
            tol,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(CliError::Config("--tol must be positive".into()));
            }
            let dir = out.unwrap_or_else(|| cfg.outputs.dir.clone());
            let report = commands::run_validate(&cfg, lattice_steps, &dir)?;
            println!(
                "max relative boundary error over tau in [0.05T, T]: {:.6e} ({} levels, tolerance {tol})",
                report.max_rel_error,
                report.rows.len()
            );
            if report.max_rel_error > tol {
                return Err(CliError::Validation(format!(
                    "max relative error {:.6e} exceeds {tol}",
                    report.max_rel_error
                )));
            }
            Ok(())
        }
        Command::Plot { out, files } => {
            if files.is_empty() {
                return Err(CliError::Config(
                    "plot needs at least one boundary file".into(),
                ));
            }
            let series = files
                .iter()
                .map(|f| {
                    Ok(plot::Series {
                        label: f.display().to_string(),
                        points: output::read_boundary_csv(f)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            output::write_atomic(&out, plot::render_svg(&series).as_bytes())?;
            println!("wrote {} ({} curves)", out.display(), series.len());
            Ok(())
        }
        Command::PsiTable { xmax, out, nodes } => {
            let count = commands::run_psi_table(xmax, nodes, &out)?;
            println!("wrote {} ({count} nodes)", out.display());
            Ok(())
        }
    }
}
