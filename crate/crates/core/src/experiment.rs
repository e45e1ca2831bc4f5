//! Evaluation protocols: closed-loop filtered rollouts, robustness sweeps,
//! filter comparisons on hard initial states, and their CSV/JSONL outputs.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{direct_rollout_check, filter_step, value_filter, Branch, FilterState, RobustOptions, TraceStep};
use crate::players::{stream_rng, Controller, Disturber};
use crate::system::System;
use crate::train::run_episode;
use crate::vehicle::sample_initial_state;

pub const SCHEMA_VERSION: u32 = 1;

const STREAM_SWEEP: u64 = 11;
const STREAM_HARD: u64 = 12;
const STREAM_FILTER: u64 = 13;

/// Safety filter wrapped around the task policy.
pub enum FilterKind<'a> {
    /// Task policy alone.
    Unfiltered,
    /// `value(x) ≥ ε` keeps the task control.
    Value {
        value: &'a (dyn Fn(&[f64]) -> f64 + Sync),
        epsilon: f64,
    },
    /// Gameplay rollout against `attacker`.
    DirectRollout {
        horizon: usize,
        attacker: &'a dyn Disturber,
    },
    /// Robust rollout with LQR tracking tubes.
    Robust { horizon: usize, options: RobustOptions },
}

/// One closed-loop trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub schema_version: u32,
    pub label: String,
    pub seed: u64,
    pub index: usize,
    pub safe: bool,
    pub steps: Vec<TraceStepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStepRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub disturbance: Vec<f64>,
    pub branch: String,
    pub certified: bool,
    pub margin_next: f64,
}

impl From<&TraceStep> for TraceStepRecord {
    fn from(s: &TraceStep) -> Self {
        Self {
            t: s.t,
            state: s.state.clone(),
            control: s.control.clone(),
            disturbance: s.disturbance.clone(),
            branch: s.branch.name().to_string(),
            certified: s.certified,
            margin_next: s.margin_next,
        }
    }
}

impl TrajectoryRecord {
    /// Fraction of steps on which the filter overrode the task policy.
    pub fn filter_frequency(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let n = self.steps.iter().filter(|s| s.branch != Branch::Task.name()).count();
        n as f64 / self.steps.len() as f64
    }
}

/// Closed-loop run of `task` behind `filter` against `attacker`, stopping at
/// the first failure.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop<S: System + ?Sized>(
    sys: &S,
    x0: &[f64],
    filter: &FilterKind,
    task: &dyn Controller,
    fallback: &dyn Controller,
    attacker: &dyn Disturber,
    length: usize,
    rng: &mut dyn rand::RngCore,
) -> (Vec<TraceStep>, bool) {
    let mut x = x0.to_vec();
    let mut state = FilterState::default();
    let mut steps = Vec::with_capacity(length);
    for t in 0..length {
        let (u, branch, certified) = match filter {
            FilterKind::Unfiltered => (task.control(&x, rng), Branch::Task, false),
            FilterKind::Value { value, epsilon } => {
                let u_task = task.control(&x, rng);
                let (u, filtered) = value_filter(value(&x), *epsilon, u_task, || fallback.control(&x, rng));
                (u, if filtered { Branch::FallbackPolicy } else { Branch::Task }, false)
            }
            FilterKind::DirectRollout { horizon, attacker: imagined } => {
                let u_task = task.control(&x, rng);
                if direct_rollout_check(sys, &x, &u_task, fallback, *imagined, *horizon) {
                    (u_task, Branch::Task, false)
                } else {
                    (fallback.control(&x, rng), Branch::FallbackPolicy, false)
                }
            }
            FilterKind::Robust { horizon, options } => {
                let d = filter_step(&mut state, sys, &x, task, fallback, *horizon, options, rng);
                let certified = d.check.passed;
                (d.control, d.branch, certified)
            }
        };
        let mut u = u;
        sys.control_set().clamp(&mut u);
        let d = attacker.disturbance(&x, &u, rng);
        let next = sys.next_state(&x, &u, &d);
        let margin_next = sys.margin(&next);
        steps.push(TraceStep {
            t,
            state: x,
            control: u,
            disturbance: d,
            branch,
            certified,
            margin_next,
        });
        if margin_next < 0.0 {
            return (steps, false);
        }
        x = next;
    }
    (steps, true)
}

/// Per-seed safety metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub rollouts: usize,
    pub safe_rate: f64,
    pub filter_frequency: f64,
}

impl SeedMetrics {
    pub fn from_records(seed: u64, records: &[TrajectoryRecord]) -> Self {
        let n = records.len();
        let safe = records.iter().filter(|r| r.safe).count();
        let freq: f64 = records.iter().map(TrajectoryRecord::filter_frequency).sum();
        Self {
            seed,
            rollouts: n,
            safe_rate: if n == 0 { 0.0 } else { safe as f64 / n as f64 },
            filter_frequency: if n == 0 { 0.0 } else { freq / n as f64 },
        }
    }
}

/// Metrics of one configuration aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub label: String,
    pub param: f64,
    pub per_seed: Vec<SeedMetrics>,
}

impl MetricsRow {
    fn values(&self, f: impl Fn(&SeedMetrics) -> f64) -> Vec<f64> {
        self.per_seed.iter().map(f).collect()
    }

    pub fn mean_safe_rate(&self) -> f64 {
        mean(&self.values(|s| s.safe_rate))
    }

    pub fn std_safe_rate(&self) -> f64 {
        std_dev(&self.values(|s| s.safe_rate))
    }

    pub fn median_safe_rate(&self) -> f64 {
        median(&self.values(|s| s.safe_rate))
    }

    pub fn median_filter_frequency(&self) -> f64 {
        median(&self.values(|s| s.filter_frequency))
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Plain rollouts of `controller` against `attacker` from seeded uniform
/// initial states.
pub fn rollout_records<S: System + ?Sized>(
    sys: &S,
    label: &str,
    controller: &dyn Controller,
    attacker: &dyn Disturber,
    n_rollouts: usize,
    seed: u64,
    length: usize,
) -> Result<Vec<TrajectoryRecord>> {
    (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, STREAM_SWEEP, i as u64);
            let x0 = sample_initial_state(sys, &mut rng)?;
            let (steps, safe) = closed_loop(sys, &x0, &FilterKind::Unfiltered, controller, controller, attacker, length, &mut rng);
            Ok(TrajectoryRecord {
                schema_version: SCHEMA_VERSION,
                label: label.to_string(),
                seed,
                index: i,
                safe,
                steps: steps.iter().map(TraceStepRecord::from).collect(),
            })
        })
        .collect()
}

/// One disturbance bound of a sweep: the system at that bound and the
/// attacker to use there.
pub struct AttackSetting<'a, S: System + ?Sized> {
    pub d_max: f64,
    pub sys: &'a S,
    pub attacker: &'a dyn Disturber,
}

/// A named controller with one instance per seed.
pub struct SeededController<'a> {
    pub label: String,
    pub per_seed: Vec<&'a dyn Controller>,
}

/// Safe rate of every controller at every bound, per seed.
pub fn robustness_sweep<S: System + ?Sized>(
    controllers: &[SeededController],
    settings: &[AttackSetting<S>],
    n_rollouts: usize,
    seeds: &[u64],
    length: usize,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for c in controllers {
        assert_eq!(c.per_seed.len(), seeds.len(), "one controller instance per seed");
        for s in settings {
            let mut per_seed = Vec::new();
            for (k, &seed) in seeds.iter().enumerate() {
                let recs = rollout_records(s.sys, &c.label, c.per_seed[k], s.attacker, n_rollouts, seed, length)?;
                per_seed.push(SeedMetrics::from_records(seed, &recs));
            }
            rows.push(MetricsRow {
                experiment: "sweep".into(),
                label: c.label.clone(),
                param: s.d_max,
                per_seed,
            });
        }
    }
    Ok(rows)
}

/// Rejection-samples states from which `fallback` survives `attacker` for
/// `length` steps while the unfiltered task policy fails.
#[allow(clippy::too_many_arguments)]
pub fn select_hard_initial_states<'t, S: System + ?Sized>(
    sys: &S,
    n: usize,
    fallback: &dyn Controller,
    attacker: &dyn Disturber,
    task: &(dyn Fn() -> Box<dyn Controller + 't> + Sync),
    length: usize,
    budget: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut found = Vec::with_capacity(n);
    let chunk = 64;
    let mut next = 0;
    while found.len() < n && next < budget {
        let end = (next + chunk).min(budget);
        let hits: Vec<Option<Vec<f64>>> = (next..end)
            .into_par_iter()
            .map(|i| -> Result<Option<Vec<f64>>> {
                let mut rng = stream_rng(seed, STREAM_HARD, i as u64);
                let x0 = sample_initial_state(sys, &mut rng)?;
                Ok(is_hard(sys, &x0, fallback, attacker, &*task(), length).then_some(x0))
            })
            .collect::<Result<_>>()?;
        found.extend(hits.into_iter().flatten());
        next = end;
    }
    found.truncate(n);
    if found.len() < n {
        return Err(Error::InsufficientYield {
            wanted: n,
            found: found.len(),
            budget,
        });
    }
    Ok(found)
}

/// Fallback survives and the task policy fails, both against `attacker`.
pub fn is_hard<S: System + ?Sized>(
    sys: &S,
    x0: &[f64],
    fallback: &dyn Controller,
    attacker: &dyn Disturber,
    task: &dyn Controller,
    length: usize,
) -> bool {
    let mut rng = stream_rng(0, STREAM_HARD, 0);
    if !run_episode(sys, x0, fallback, attacker, length, &mut rng, None).safe {
        return false;
    }
    !run_episode(sys, x0, task, attacker, length, &mut rng, None).safe
}

/// Runs every filter from every initial state; returns per-filter metrics
/// and the trajectory records.
#[allow(clippy::too_many_arguments)]
pub fn filter_comparison<'t, S: System + ?Sized>(
    sys: &S,
    filters: &[(String, FilterKind)],
    task: &(dyn Fn() -> Box<dyn Controller + 't> + Sync),
    fallback: &dyn Controller,
    attacker: &dyn Disturber,
    initial_states: &[Vec<f64>],
    seed: u64,
    length: usize,
) -> (Vec<SeedMetrics>, Vec<Vec<TrajectoryRecord>>) {
    let mut metrics = Vec::new();
    let mut all = Vec::new();
    for (label, f) in filters {
        let recs: Vec<TrajectoryRecord> = initial_states
            .par_iter()
            .enumerate()
            .map(|(i, x0)| {
                let mut rng = stream_rng(seed, STREAM_FILTER, i as u64);
                let t = task();
                let (steps, safe) = closed_loop(sys, x0, f, &*t, fallback, attacker, length, &mut rng);
                TrajectoryRecord {
                    schema_version: SCHEMA_VERSION,
                    label: label.clone(),
                    seed,
                    index: i,
                    safe,
                    steps: steps.iter().map(TraceStepRecord::from).collect(),
                }
            })
            .collect();
        metrics.push(SeedMetrics::from_records(seed, &recs));
        all.push(recs);
    }
    (metrics, all)
}

const METRICS_HEADER: &str = "schema_version,experiment,label,param,seed,rollouts,safe_rate,filter_frequency";

/// Writes one CSV line per (row, seed); rows are sorted for stable output.
pub fn emit_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.experiment.as_str(), a.label.as_str())
            .cmp(&(b.experiment.as_str(), b.label.as_str()))
            .then(a.param.total_cmp(&b.param))
    });
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in sorted {
        for m in &r.per_seed {
            s.push_str(&format!(
                "{SCHEMA_VERSION},{},{},{},{},{},{},{}\n",
                r.experiment, r.label, r.param, m.seed, m.rollouts, m.safe_rate, m.filter_frequency
            ));
        }
    }
    write_file(path, s.as_bytes())
}

/// Parses a file written by [`emit_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, "unexpected metrics header"));
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::format(path, format!("bad metrics line: {line}")));
        }
        let bad = |_| Error::format(path, format!("bad number in: {line}"));
        let param: f64 = f[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let m = SeedMetrics {
            seed: f[4].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            rollouts: f[5].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            safe_rate: f[6].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            filter_frequency: f[7].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        };
        match rows.last_mut() {
            Some(r) if r.experiment == f[1] && r.label == f[2] && r.param.to_bits() == param.to_bits() => r.per_seed.push(m),
            _ => rows.push(MetricsRow {
                experiment: f[1].to_string(),
                label: f[2].to_string(),
                param,
                per_seed: vec![m],
            }),
        }
    }
    Ok(rows)
}

/// One JSON object per trajectory.
pub fn dump_trajectories(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let r: TrajectoryRecord = serde_json::from_str(&line)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::format(path, format!("schema version {}", r.schema_version)));
        }
        out.push(r);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, param: f64) -> MetricsRow {
        MetricsRow {
            experiment: "sweep".into(),
            label: label.into(),
            param,
            per_seed: vec![
                SeedMetrics {
                    seed: 0,
                    rollouts: 3,
                    safe_rate: 2.0 / 3.0,
                    filter_frequency: 0.1,
                },
                SeedMetrics {
                    seed: 1,
                    rollouts: 3,
                    safe_rate: 1.0,
                    filter_frequency: 0.0,
                },
            ],
        }
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![row("a", 0.05), row("a", 0.1)];
        emit_metrics(&rows, &p).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
        emit_metrics(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
        assert_eq!(std_dev(&[1.0, 1.0]), 0.0);
    }
}
