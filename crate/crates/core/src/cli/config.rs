//! Run configuration read from a sectioned TOML file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{GridSpec, MarketParams};
use crate::scheme::IterationConfig;
use crate::volatility::{
    build_psi_table, BarlesSonerVol, ConstantVol, Volatility, DEFAULT_NODE_COUNT, DEFAULT_SEED_X,
    DEFAULT_X_MAX,
};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    pub grid: GridSection,
    pub model: ModelConfig,
    #[serde(default)]
    pub iteration: IterationConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub dividend_yield: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_length")]
    pub length: f64,
    pub space_steps: usize,
    pub time_steps: usize,
}

fn default_length() -> f64 {
    GridSpec::DEFAULT_LENGTH
}

/// Volatility selection; `kind` picks the variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Constant {
        sigma_hat: f64,
    },
    BarlesSoner {
        sigma_hat: f64,
        a: f64,
        #[serde(default = "default_psi_x_max")]
        psi_x_max: f64,
    },
}

fn default_psi_x_max() -> f64 {
    DEFAULT_X_MAX
}

impl ModelConfig {
    /// Whether the model is the linear Black–Scholes one.
    pub fn is_linear(&self) -> bool {
        match *self {
            ModelConfig::Constant { .. } => true,
            ModelConfig::BarlesSoner { a, .. } => a == 0.0,
        }
    }

    pub fn sigma_hat(&self) -> f64 {
        match *self {
            ModelConfig::Constant { sigma_hat } | ModelConfig::BarlesSoner { sigma_hat, .. } => {
                sigma_hat
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for all artifacts, relative to the working directory.
    pub dir: PathBuf,
    /// τ values whose Π profile is dumped (snapped to the nearest level).
    pub snapshot_taus: Vec<f64>,
    /// Write every `boundary_stride`-th level to boundary.csv (the last
    /// level is always written).
    pub boundary_stride: usize,
    /// Number of levels compared against the lattice by `validate`.
    pub validation_samples: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_taus: Vec::new(),
            boundary_stride: 1,
            validation_samples: 20,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn market(&self) -> Result<MarketParams, CliError> {
        let m = self.market;
        MarketParams::new(m.strike, m.maturity, m.rate, m.dividend_yield)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        let g = self.grid;
        GridSpec::new(g.length, g.space_steps, g.time_steps)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks every section before anything is solved.
    pub fn validate(&self) -> Result<(), CliError> {
        self.market()?;
        self.grid()?;
        self.iteration
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let sigma_hat = self.model.sigma_hat();
        if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
            return Err(CliError::Config("model.sigma_hat must be positive".into()));
        }
        if let ModelConfig::BarlesSoner { a, psi_x_max, .. } = self.model {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(CliError::Config("model.a must be nonnegative".into()));
            }
            if !(psi_x_max > DEFAULT_SEED_X && psi_x_max.is_finite()) {
                return Err(CliError::Config(
                    "model.psi_x_max must exceed the table seed".into(),
                ));
            }
        }
        let o = &self.outputs;
        if o.boundary_stride == 0 {
            return Err(CliError::Config(
                "outputs.boundary_stride must be at least 1".into(),
            ));
        }
        if o.validation_samples == 0 {
            return Err(CliError::Config(
                "outputs.validation_samples must be at least 1".into(),
            ));
        }
        let t = self.market.maturity;
        if let Some(bad) = o
            .snapshot_taus
            .iter()
            .find(|&&tau| !(0.0..=t).contains(&tau))
        {
            return Err(CliError::Config(format!(
                "snapshot tau {bad} outside [0, {t}]"
            )));
        }
        Ok(())
    }

    /// Builds the volatility model (tabulating Ψ for Barles–Soner).
    pub fn volatility(&self) -> Result<Volatility, CliError> {
        let rate = self.market.rate;
        let model = match self.model {
            ModelConfig::Constant { sigma_hat } => {
                Volatility::Constant(ConstantVol::new(sigma_hat)?)
            }
            ModelConfig::BarlesSoner {
                sigma_hat,
                a,
                psi_x_max,
            } => {
                let table = build_psi_table(psi_x_max, DEFAULT_NODE_COUNT, DEFAULT_SEED_X)?;
                Volatility::BarlesSoner(BarlesSonerVol::new(sigma_hat, a, rate, Arc::new(table))?)
            }
        };
        Ok(model)
    }
}
