//! On-disk caches for solved grids and trained policies, keyed by content
//! hashes of the settings that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::GridConfig;
use crate::error::{Error, Result};
use crate::grid::{self, GameMode, GridSidecar, GridValueFunction};
use crate::nn::io;
use crate::nn::{Critic, SquashedGaussianPolicy};
use crate::system::System;
use crate::train::{self, Method, TrainConfig, TrainOutcome};
use crate::vehicle::{EnvSpec, ReducedCar};

fn hash_json<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_string(v).expect("settings serialize");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Loads the reduced-car oracle grid from `cache_dir`, solving and saving it
/// on a miss. A cached grid is used only when its sidecar matches.
pub fn reduced_car_grid(env: &EnvSpec, cfg: &GridConfig, cache_dir: &Path) -> Result<GridValueFunction> {
    let key = hash_json(&(env, cfg));
    let path = cache_dir.join(format!("grid-{key}.bin"));
    let side_path = path.with_extension("json");
    let sidecar = GridSidecar {
        env_hash: env.hash_hex(),
        gamma: cfg.gamma,
        mode: GameMode::TwoPlayer,
        shape: cfg.shape.to_vec(),
        d_max: env.d_max,
    };
    if path.exists() && side_path.exists() && GridSidecar::load(&side_path)? == sidecar {
        return GridValueFunction::load(&path);
    }
    let car = ReducedCar::new(env.clone());
    let axes = grid::reduced_car_axes_with(car.state_box(), cfg.shape);
    let report = grid::solve(&car, axes, &cfg.actions(&car), &cfg.solve_options())?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    report.value.save(&path)?;
    sidecar.save(&side_path)?;
    Ok(report.value)
}

/// Trained networks of one method and seed.
#[derive(Debug, Clone)]
pub struct TrainedPolicies {
    pub method: Method,
    pub control: SquashedGaussianPolicy,
    pub disturbance: Option<SquashedGaussianPolicy>,
    pub critic: Critic,
}

impl From<&TrainOutcome> for TrainedPolicies {
    fn from(o: &TrainOutcome) -> Self {
        Self {
            method: o.method,
            control: o.control.clone(),
            disturbance: o.disturbance.clone(),
            critic: o.critic.clone(),
        }
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct TrainSidecar {
    method: Method,
    env_hash: String,
    config_hash: String,
}

/// Directory holding the cached run of `method` for `cfg.seed`.
pub fn train_dir(env: &EnvSpec, cfg: &TrainConfig, method: Method, cache_dir: &Path) -> PathBuf {
    cache_dir.join(format!("train-{}-{}-seed{}", method.name(), hash_json(&(env, cfg)), cfg.seed))
}

fn load_trained(dir: &Path, sidecar: &TrainSidecar) -> Result<Option<TrainedPolicies>> {
    let side_path = dir.join("run.json");
    if !side_path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let found: TrainSidecar = serde_json::from_str(&text)?;
    if &found != sidecar {
        return Ok(None);
    }
    let d_path = dir.join("disturbance.bin");
    Ok(Some(TrainedPolicies {
        method: sidecar.method,
        control: io::load_policy(&dir.join("control.bin"))?,
        disturbance: if sidecar.method == Method::Adversarial {
            Some(io::load_policy(&d_path)?)
        } else {
            None
        },
        critic: io::load_critic(&dir.join("critic.bin"))?,
    }))
}

/// Trains every method in `methods` on the reduced car for `cfg.seed`,
/// reusing cached runs and sharing one warm start among the misses.
pub fn trained_methods(
    env: &EnvSpec,
    cfg: &TrainConfig,
    methods: &[Method],
    cache_dir: &Path,
) -> Result<Vec<TrainedPolicies>> {
    let car = ReducedCar::new(env.clone());
    let mut warm = None;
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let dir = train_dir(env, cfg, m, cache_dir);
        let sidecar = TrainSidecar {
            method: m,
            env_hash: env.hash_hex(),
            config_hash: hash_json(cfg),
        };
        if let Some(p) = load_trained(&dir, &sidecar)? {
            out.push(p);
            continue;
        }
        if warm.is_none() {
            warm = Some(train::warm_start(&car, cfg, None)?);
        }
        let state = warm.clone().expect("warm start present");
        let outcome = train::train_from(&car, cfg, m, state, None)?;
        train::save_outcome(&outcome, &dir)?;
        let side_path = dir.join("run.json");
        fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side_path, e))?;
        out.push(TrainedPolicies::from(&outcome));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let env = EnvSpec::default();
        let cfg = GridConfig {
            shape: [9, 5, 5],
            tol: 1e-3,
            max_sweeps: 5000,
            ..Default::default()
        };
        let a = reduced_car_grid(&env, &cfg, dir.path()).unwrap();
        let b = reduced_car_grid(&env, &cfg, dir.path()).unwrap();
        assert_eq!(a.values, b.values);
        let n = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(n, 2);
    }
}
