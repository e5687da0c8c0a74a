//! Run configuration, read from a TOML file and patched by flags.

use std::path::{Path, PathBuf};

use isingdyn::estimators::{default_c_lambda, LambdaCount};
use isingdyn::experiments::{MGrid, DESK_CONSECUTIVE_SUCCESSES};
use isingdyn::{Estimator, Regime, SolverConfig, TopologySpec};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// 0 uses every available core.
    #[serde(default)]
    pub thread_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn: Option<LearnBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mstar: Option<MStarBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<ActiveBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neural: Option<NeuralBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBlock {
    pub regime: Regime,
    pub m: usize,
    #[serde(default)]
    pub burn_in: usize,
    /// Use this model file instead of building `[topology]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFamily {
    Lattice,
    RandomRegular,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnBlock {
    pub samples: PathBuf,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lambda: Option<f64>,
    /// Picks the tabulated `c_λ` when none is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<GraphFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Ground truth; supplies `alpha` when unset and is scored against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub lambda_count: LambdaCount,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MStarBlock {
    pub regime: Regime,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lambda: Option<f64>,
    #[serde(default = "default_consecutive")]
    pub consecutive_successes: usize,
    #[serde(default)]
    pub m_grid: MGrid,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Each trial is an active learning run (M-regime, D-RISE only).
    #[serde(default)]
    pub active: bool,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveBlock {
    pub m: usize,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    #[serde(default = "default_initial_fraction")]
    pub initial_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lambda: Option<f64>,
    #[serde(default)]
    pub force_uniform: bool,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NeuralSource {
    /// `neuron_id,time_ms` rows.
    Spikes { path: PathBuf, duration_ms: f64 },
    /// One row of `±1` per neuron.
    Raster { path: PathBuf },
    /// Restarted Glauber segments of a model (the built-in fixture when
    /// `model` is unset).
    Synthetic {
        runs: usize,
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralBlock {
    pub source: NeuralSource,
    #[serde(default = "default_bin_ms")]
    pub bin_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neurons: Option<Vec<usize>>,
    #[serde(default = "default_neural_c")]
    pub c_lambda: f64,
    #[serde(default = "default_m_sim")]
    pub m_sim: usize,
    #[serde(default = "default_gap_bins")]
    pub gap_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn default_estimator() -> Estimator {
    Estimator::DRise
}

fn default_consecutive() -> usize {
    DESK_CONSECUTIVE_SUCCESSES
}

fn default_i_max() -> usize {
    15
}

fn default_initial_fraction() -> f64 {
    1.0 / 3.0
}

fn default_bin_ms() -> f64 {
    isingdyn::neural::DEFAULT_BIN_MS
}

fn default_neural_c() -> f64 {
    0.1
}

fn default_m_sim() -> usize {
    200_000
}

fn default_gap_bins() -> usize {
    isingdyn::neural::DEFAULT_GAP_BINS
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Ok((cfg, text))
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::config(format!("cannot serialize config: {e}")))
    }

    pub fn topology(&self) -> Result<&TopologySpec, Failure> {
        self.topology.as_ref().ok_or_else(|| Failure::config("config has no [topology] block"))
    }
}

/// `c_λ` from the table when the config leaves it open.
pub fn resolve_c_lambda(
    given: Option<f64>,
    lattice: Option<bool>,
    regime: Regime,
    estimator: Estimator,
) -> Result<f64, Failure> {
    match (given, lattice) {
        (Some(c), _) => Ok(c),
        (None, Some(l)) => Ok(default_c_lambda(l, regime, estimator)),
        (None, None) => Err(Failure::config("c_lambda is unset and the graph family is unknown")),
    }
}

pub fn block<'a, T>(b: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    b.as_ref().ok_or_else(|| Failure::config(format!("config has no [{name}] block")))
}
