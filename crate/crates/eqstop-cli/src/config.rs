//! Run configuration: a JSON file with full defaulting, overridden field by
//! field by command-line flags, so a run is reproducible from a single
//! serializable source of truth.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use eqstop::montecarlo::MonteCarloSpec;
use eqstop::DiscountFunction;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DiscountChoice {
    Hyperbolic,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProblemChoice {
    Bessel,
    Smoking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Everything a command needs. Optional fields default from `beta`, scaling
/// the unit problem's settings by `1/sqrt(beta)` in space and `1/beta` in
/// time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub beta: f64,
    pub discount: DiscountChoice,
    /// Rate of the exponential discount when selected.
    pub rho: f64,
    pub problem: ProblemChoice,
    /// Initial threshold for iterate/classify; defaults to the naive level
    /// `1/sqrt(beta)`.
    pub start_threshold: Option<f64>,
    pub grid_n: usize,
    /// Upper end of the state grid; defaults to `4/sqrt(beta)`.
    pub grid_max: Option<f64>,
    pub max_steps: usize,
    pub n_paths: usize,
    /// Euler step; defaults to `1e-3/beta`.
    pub dt: Option<f64>,
    /// Simulation horizon; defaults to `200/beta`.
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Only settable here, not by flag: turning the crossing correction off
    /// is a diagnostic, not a tuning knob.
    pub bridge_correction: bool,
    /// Initial time for the boundary tabulation.
    pub t: f64,
    pub s_max: f64,
    pub n_samples: usize,
    /// Horizon of the procrastination example.
    pub t_max: f64,
    pub smoking_grid: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            beta: 1.0,
            discount: DiscountChoice::Hyperbolic,
            rho: 0.5,
            problem: ProblemChoice::Bessel,
            start_threshold: None,
            grid_n: 2001,
            grid_max: None,
            max_steps: 10,
            n_paths: 100_000,
            dt: None,
            horizon: None,
            seed: 1729,
            bridge_correction: true,
            t: 0.0,
            s_max: 15.0,
            n_samples: 151,
            t_max: 10.0,
            smoking_grid: 21,
            out: None,
            format: OutputFormat::Json,
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(CliError::usage(format!(
                "invalid beta: {} (must be finite and positive)",
                self.beta
            )));
        }
        if self.discount == DiscountChoice::Exponential && !(self.rho > 0.0 && self.rho.is_finite())
        {
            return Err(CliError::usage(format!(
                "invalid rho: {} (must be finite and positive)",
                self.rho
            )));
        }
        if self.grid_n < 2 {
            return Err(CliError::usage(format!(
                "grid_n = {} but at least 2 grid states are required",
                self.grid_n
            )));
        }
        if self.n_samples < 1 {
            return Err(CliError::usage("n_samples must be at least 1".into()));
        }
        if self.smoking_grid < 2 {
            return Err(CliError::usage(
                "smoking_grid must be at least 2 time points".into(),
            ));
        }
        if let Some(a) = self.start_threshold {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(CliError::usage(format!(
                    "invalid start_threshold: {a} (must be finite and nonnegative)"
                )));
            }
        }
        Ok(())
    }

    pub fn naive_threshold(&self) -> f64 {
        1.0 / self.beta.sqrt()
    }

    pub fn start(&self) -> f64 {
        self.start_threshold.unwrap_or_else(|| self.naive_threshold())
    }

    pub fn grid(&self) -> Vec<f64> {
        let hi = self.grid_max.unwrap_or(4.0 / self.beta.sqrt());
        let n = self.grid_n;
        (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect()
    }

    pub fn mc_spec(&self) -> MonteCarloSpec {
        let scaled = MonteCarloSpec::for_beta(self.beta);
        MonteCarloSpec {
            n_paths: self.n_paths,
            dt: self.dt.unwrap_or(scaled.dt),
            horizon: self.horizon.unwrap_or(scaled.horizon),
            master_seed: self.seed,
            bridge_correction: self.bridge_correction,
        }
    }

    pub fn discount_fn(&self) -> Result<DiscountFunction, CliError> {
        Ok(match self.discount {
            DiscountChoice::Hyperbolic => DiscountFunction::hyperbolic(self.beta)?,
            DiscountChoice::Exponential => DiscountFunction::exponential(self.rho)?,
        })
    }
}
