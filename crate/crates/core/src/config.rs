//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ActionGrid, GameMode, SolveOptions, SweepOrder};
use crate::ilqr::TaskCost;
use crate::lqr::TrackingOptions;
use crate::system::System;
use crate::train::TrainConfig;
use crate::vehicle::EnvSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub shape: [usize; 3],
    pub gamma: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub control_points: usize,
    pub disturbance_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            shape: [101, 25, 51],
            gamma: 0.999,
            tol: 1e-4,
            max_sweeps: 10_000,
            control_points: 5,
            disturbance_points: 3,
        }
    }
}

impl GridConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            gamma: self.gamma,
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            mode: GameMode::TwoPlayer,
            order: SweepOrder::GaussSeidel,
        }
    }

    pub fn actions<S: System + ?Sized>(&self, sys: &S) -> ActionGrid {
        ActionGrid::tensor(
            sys.control_set(),
            self.control_points,
            sys.disturbance_set(),
            self.disturbance_points,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub horizon: usize,
    /// Value-filter threshold.
    pub epsilon: f64,
    pub tracking: TrackingOptions,
    pub task: TaskCost,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            epsilon: 0.0,
            tracking: TrackingOptions::default(),
            task: TaskCost::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentsConfig {
    pub n_rollouts: usize,
    pub seeds: Vec<u64>,
    pub d_max_list: Vec<f64>,
    pub n_hard_states: usize,
    pub hard_state_budget: usize,
    pub episode_length: usize,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 100,
            seeds: vec![0, 1, 2],
            d_max_list: vec![0.0, 0.025, 0.05, 0.075, 0.1],
            n_hard_states: 100,
            hard_state_budget: 20_000,
            episode_length: 200,
        }
    }
}

/// Top-level configuration; every section is optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub grid: GridConfig,
    pub train: TrainConfig,
    pub filters: FilterConfig,
    pub experiments: ExperimentsConfig,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            grid: GridConfig::default(),
            train: TrainConfig::default(),
            filters: FilterConfig::default(),
            experiments: ExperimentsConfig::default(),
            output_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from("cache"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.grid.shape.iter().any(|&n| n < 2) {
            return bad("grid shape needs at least 2 nodes per axis");
        }
        if !(self.grid.gamma > 0.0 && self.grid.gamma < 1.0) || !(self.grid.tol > 0.0) {
            return bad("grid gamma must lie in (0, 1) and tol must be positive");
        }
        if self.filters.horizon == 0 {
            return bad("filter horizon must be positive");
        }
        if self.experiments.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.experiments.d_max_list.iter().any(|d| !(*d >= 0.0)) {
            return bad("d_max values must be nonnegative");
        }
        if self.experiments.episode_length == 0 {
            return bad("episode_length must be positive");
        }
        Ok(())
    }

    /// Largest bound of the sweep, used for training and filtering.
    pub fn max_d(&self) -> f64 {
        self.experiments.d_max_list.iter().copied().fold(self.env.d_max, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"experiments": {"n_rollouts": 7}}"#).unwrap();
        assert_eq!(c.experiments.n_rollouts, 7);
        assert_eq!(c.experiments.seeds, vec![0, 1, 2]);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = ExperimentConfig::default();
        c.experiments.seeds.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.grid.shape = [1, 5, 5];
        assert!(c.validate().is_err());
    }
}
