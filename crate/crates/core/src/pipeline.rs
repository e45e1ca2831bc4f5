//! End-to-end experiment drivers on the reduced car, shared by the CLI and
//! the acceptance tests.

use std::path::Path;

use crate::artifacts::{reduced_car_grid, trained_methods, TrainedPolicies};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{
    filter_comparison, robustness_sweep, select_hard_initial_states, AttackSetting, FilterKind, MetricsRow,
    SeededController, TrajectoryRecord,
};
use crate::filter::{certificate_monitor, CriticValue, MonitorVerdict, RobustOptions, TraceStep};
use crate::grid::{confusion_eval, ConfusionCounts, GridValueFunction};
use crate::ilqr::IlqrPolicy;
use crate::players::{Controller, OracleDisturbance, PolicyMode};
use crate::train::{Method, TrainConfig};
use crate::vehicle::ReducedCar;

pub const ALL_METHODS: [Method; 3] = [Method::Sac, Method::SacDr, Method::Adversarial];

/// Training config for one seed, trained at the largest sweep bound.
pub fn seeded_train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

/// Environment the policies are trained and filtered in.
pub fn training_env(cfg: &ExperimentConfig) -> crate::vehicle::EnvSpec {
    cfg.env.with_d_max(cfg.max_d())
}

/// Trained policies for every seed, in `methods` order per seed.
pub fn trained_all(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<Vec<TrainedPolicies>>> {
    let env = training_env(cfg);
    cfg.experiments
        .seeds
        .iter()
        .map(|&s| trained_methods(&env, &seeded_train_config(cfg, s), methods, &cfg.cache_dir))
        .collect()
}

/// Oracle grid at the training bound.
pub fn training_grid(cfg: &ExperimentConfig) -> Result<GridValueFunction> {
    reduced_car_grid(&training_env(cfg), &cfg.grid, &cfg.cache_dir)
}

/// Safe rate of the three trained controllers under the oracle attack at
/// every bound of `d_max_list`.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let trained = trained_all(cfg, &ALL_METHODS)?;
    let modes: Vec<Vec<PolicyMode>> = trained
        .iter()
        .map(|per_seed| per_seed.iter().map(|p| PolicyMode(&p.control)).collect())
        .collect();
    let controllers: Vec<SeededController> = ALL_METHODS
        .iter()
        .enumerate()
        .map(|(k, m)| SeededController {
            label: m.name().to_string(),
            per_seed: modes.iter().map(|s| &s[k] as &dyn Controller).collect(),
        })
        .collect();
    let mut rows = Vec::new();
    for &d in &cfg.experiments.d_max_list {
        let env = cfg.env.with_d_max(d);
        let car = ReducedCar::new(env.clone());
        let grid = reduced_car_grid(&env, &cfg.grid, &cfg.cache_dir)?;
        let actions = cfg.grid.actions(&car);
        let attacker = OracleDisturbance {
            value: &grid,
            sys: &car,
            actions: &actions,
        };
        let setting = AttackSetting {
            d_max: d,
            sys: &car,
            attacker: &attacker,
        };
        rows.extend(robustness_sweep(
            &controllers,
            std::slice::from_ref(&setting),
            cfg.experiments.n_rollouts,
            &cfg.experiments.seeds,
            cfg.experiments.episode_length,
        )?);
    }
    Ok(rows)
}

/// Sign confusion of each seed's adversarially trained critic against the
/// oracle grid, over every grid node.
pub fn confusion(cfg: &ExperimentConfig) -> Result<Vec<(u64, ConfusionCounts)>> {
    let grid = training_grid(cfg)?;
    let trained = trained_all(cfg, &[Method::Adversarial])?;
    let cells: Vec<usize> = (0..grid.len()).collect();
    Ok(cfg
        .experiments
        .seeds
        .iter()
        .zip(&trained)
        .map(|(&seed, p)| {
            let p = &p[0];
            let v = CriticValue {
                critic: &p.critic,
                control: &p.control,
                disturbance: p.disturbance.as_ref(),
            };
            (seed, confusion_eval(&grid, |x| v.value(x) >= 0.0, &cells))
        })
        .collect())
}

/// Output of [`filter_eval`].
#[derive(Debug, Clone)]
pub struct FilterEvalResult {
    pub rows: Vec<MetricsRow>,
    pub traces: Vec<TrajectoryRecord>,
    /// Monitor verdict of every robust-filter trace, by seed.
    pub monitor: Vec<(u64, MonitorVerdict)>,
}

pub const FILTER_LABELS: [&str; 4] = ["unfiltered", "value", "rollout", "robust"];

/// Compares the filters on hard initial states under the oracle attack,
/// with the adversarially trained policy as fallback and iLQR as task.
pub fn filter_eval(cfg: &ExperimentConfig) -> Result<FilterEvalResult> {
    let env = training_env(cfg);
    let car = ReducedCar::new(env.clone());
    let grid = training_grid(cfg)?;
    let actions = cfg.grid.actions(&car);
    let attacker = OracleDisturbance {
        value: &grid,
        sys: &car,
        actions: &actions,
    };
    let trained = trained_all(cfg, &[Method::Adversarial])?;
    let horizon = cfg.filters.horizon;
    let length = cfg.experiments.episode_length;
    let task_cost = cfg.filters.task.clone();
    let task = || Box::new(IlqrPolicy::new(&car, task_cost.clone())) as Box<dyn Controller + '_>;

    let mut rows: Vec<MetricsRow> = FILTER_LABELS
        .iter()
        .map(|l| MetricsRow {
            experiment: "filter".into(),
            label: l.to_string(),
            param: horizon as f64,
            per_seed: Vec::new(),
        })
        .collect();
    let mut traces = Vec::new();
    let mut monitor = Vec::new();
    for (&seed, p) in cfg.experiments.seeds.iter().zip(&trained) {
        let p = &p[0];
        let fallback = PolicyMode(&p.control);
        let imagined = PolicyMode(p.disturbance.as_ref().expect("adversarial run has a disturbance policy"));
        let states = select_hard_initial_states(
            &car,
            cfg.experiments.n_hard_states,
            &fallback,
            &attacker,
            &task,
            length,
            cfg.experiments.hard_state_budget,
            seed,
        )?;
        let critic = CriticValue {
            critic: &p.critic,
            control: &p.control,
            disturbance: p.disturbance.as_ref(),
        };
        let value = |x: &[f64]| critic.value(x);
        let filters = vec![
            (FILTER_LABELS[0].to_string(), FilterKind::Unfiltered),
            (
                FILTER_LABELS[1].to_string(),
                FilterKind::Value {
                    value: &value,
                    epsilon: cfg.filters.epsilon,
                },
            ),
            (
                FILTER_LABELS[2].to_string(),
                FilterKind::DirectRollout {
                    horizon,
                    attacker: &imagined,
                },
            ),
            (
                FILTER_LABELS[3].to_string(),
                FilterKind::Robust {
                    horizon,
                    options: RobustOptions {
                        tracking: cfg.filters.tracking.clone(),
                        skip_tube: false,
                    },
                },
            ),
        ];
        let (metrics, records) = filter_comparison(&car, &filters, &task, &fallback, &attacker, &states, seed, length);
        for (k, (m, recs)) in metrics.into_iter().zip(records).enumerate() {
            if FILTER_LABELS[k] == "robust" {
                for r in &recs {
                    monitor.push((seed, certificate_monitor(&record_trace(r), horizon)));
                }
            }
            rows[k].per_seed.push(m);
            traces.extend(recs);
        }
    }
    Ok(FilterEvalResult { rows, traces, monitor })
}

/// Rebuilds monitor input from a dumped trajectory.
pub fn record_trace(r: &TrajectoryRecord) -> Vec<TraceStep> {
    r.steps
        .iter()
        .map(|s| TraceStep {
            t: s.t,
            state: s.state.clone(),
            control: s.control.clone(),
            disturbance: s.disturbance.clone(),
            branch: crate::filter::Branch::from_name(&s.branch).unwrap_or(crate::filter::Branch::FallbackPolicy),
            certified: s.certified,
            margin_next: s.margin_next,
        })
        .collect()
}

/// Writes metrics and traces of a filter evaluation under `dir`.
pub fn write_filter_eval(res: &FilterEvalResult, dir: &Path) -> Result<()> {
    crate::experiment::emit_metrics(&res.rows, &dir.join("filter_metrics.csv"))?;
    crate::experiment::dump_trajectories(&res.traces, &dir.join("filter_traces.jsonl"))
}
