use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abstract_mdp::{DEFAULT_DEDUP_TOLERANCE, DEFAULT_PROTOTYPE_SAMPLES};
use crate::envs::{EnvConfig, GoalSplit};
use crate::error::{Error, Result};
use crate::homomorphism::TrainConfig;
use crate::planner::{PlannerConfig, TAU_GRID};

pub const DATA_DIR_ENV: &str = "EQPLAN_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig { trajectories: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbstractConfig {
    /// States sampled from the dataset before pruning (`L`).
    pub samples: usize,
    pub dedup_tolerance: f64,
    pub tau: f64,
    /// Search `tau_grid` on train goals instead of using `tau`.
    pub grid_search: bool,
    pub tau_grid: Vec<f64>,
    pub seed: u64,
    /// Seed of the train-goal episodes scored during the grid search.
    pub search_seed: u64,
}

impl Default for AbstractConfig {
    fn default() -> Self {
        AbstractConfig {
            samples: DEFAULT_PROTOTYPE_SAMPLES,
            dedup_tolerance: DEFAULT_DEDUP_TOLERANCE,
            tau: 1e-20,
            grid_search: false,
            tau_grid: TAU_GRID.to_vec(),
            seed: 1,
            search_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub goal_split: GoalSplit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes: 100, seed: 3, goal_split: GoalSplit::Train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub env: EnvConfig,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub abstract_mdp: AbstractConfig,
    pub planner: PlannerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("runs"),
            env: EnvConfig::default(),
            collect: CollectConfig::default(),
            train: TrainConfig::default(),
            abstract_mdp: AbstractConfig::default(),
            planner: PlannerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.planner.validate()?;
        let a = &self.abstract_mdp;
        if a.samples == 0 {
            return Err(Error::config("abstract_mdp.samples must be positive"));
        }
        if !(a.dedup_tolerance >= 0.0) {
            return Err(Error::config("abstract_mdp.dedup_tolerance must be non-negative"));
        }
        if !(a.tau > 0.0) || a.tau_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config("temperatures must be positive"));
        }
        if a.grid_search && a.tau_grid.is_empty() {
            return Err(Error::config("abstract_mdp.tau_grid is empty"));
        }
        if self.collect.trajectories == 0 {
            return Err(Error::config("collect.trajectories must be positive"));
        }
        Ok(())
    }

    /// Applies the data-directory environment override.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            self.data_dir = PathBuf::from(dir);
        }
        self
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.data_dir.join("dataset.bin")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.data_dir.join("checkpoint.json")
    }

    pub fn training_log_path(&self) -> PathBuf {
        self.data_dir.join("training_log.csv")
    }

    pub fn abstract_mdp_path(&self) -> PathBuf {
        self.data_dir.join("abstract_mdp.json")
    }

    pub fn qtable_path(&self) -> PathBuf {
        self.data_dir.join("qtable.json")
    }

    pub fn tau_search_path(&self) -> PathBuf {
        self.data_dir.join("tau_search.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.data_dir.join("eval_summary.csv")
    }

    pub fn latents_path(&self) -> PathBuf {
        self.data_dir.join("latents.csv")
    }
}
