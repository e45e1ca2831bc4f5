//! Runtime safety filters: value threshold, direct gameplay rollout and
//! robust rollout with a tracking fallback.

use rand::{RngCore, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lqr::{build_plan, nominal_rollout, NominalTrajectory, TrackingOptions, TrackingPlan};
use crate::nn::{Critic, SquashedGaussianPolicy};
use crate::players::{Controller, Disturber};
use crate::system::System;
use crate::zonotope::{controls_within, occupied_region, violates_constraints, FrsTube, ZonotopeDump};

/// Least-restrictive switch: the task control when `value ≥ ε`, otherwise
/// the safe control.
pub fn value_filter(value: f64, epsilon: f64, u_task: Vec<f64>, u_safe: impl FnOnce() -> Vec<f64>) -> (Vec<f64>, bool) {
    if value >= epsilon {
        (u_task, false)
    } else {
        (u_safe(), true)
    }
}

/// Critic value `Q(x, π^u(x), π^d(x))` at the policy modes; a missing
/// disturbance policy means `d = 0`.
pub struct CriticValue<'a> {
    pub critic: &'a Critic,
    pub control: &'a SquashedGaussianPolicy,
    pub disturbance: Option<&'a SquashedGaussianPolicy>,
}

impl CriticValue<'_> {
    pub fn value(&self, x: &[f64]) -> f64 {
        let u = self.control.mode(x).expect("policy input dimension");
        let d = match self.disturbance {
            Some(p) => p.mode(x).expect("policy input dimension"),
            None => vec![0.0; self.critic.disturbance_dim],
        };
        self.critic.q(x, &u, &d).expect("critic input dimension")
    }
}

/// Plays the task control once, then the fallback against `attacker` for
/// `horizon` steps; passes iff no visited state has `g < 0`.
pub fn direct_rollout_check<S: System + ?Sized>(
    sys: &S,
    x: &[f64],
    u_task: &[f64],
    fallback: &dyn Controller,
    attacker: &dyn Disturber,
    horizon: usize,
) -> bool {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut xs = x.to_vec();
    let mut next = vec![0.0; sys.state_dim()];
    for tau in 0..=horizon {
        let u = if tau == 0 { u_task.to_vec() } else { fallback.control(&xs, &mut rng) };
        let d = attacker.disturbance(&xs, &u, &mut rng);
        sys.step(&xs, &u, &d, &mut next);
        if sys.margin(&next) < 0.0 {
            return false;
        }
        std::mem::swap(&mut xs, &mut next);
    }
    true
}

/// A nominal fallback with its tracking gains and error tube.
#[derive(Debug, Clone)]
pub struct FallbackPlan {
    pub trajectory: NominalTrajectory,
    pub tracking: TrackingPlan,
    pub tube: FrsTube,
    pub certified_at: usize,
    pub age: usize,
}

impl FallbackPlan {
    /// Tracking control `ū_τ + K_τ (x − x̄_τ)`, unclamped.
    pub fn tracking_control(&self, tau: usize, x: &[f64]) -> Vec<f64> {
        let xb = &self.trajectory.states[tau];
        let k = &self.tracking.gains[tau];
        let mut u = self.trajectory.controls[tau].clone();
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += (0..x.len()).map(|j| k[(i, j)] * (x[j] - xb[j])).sum::<f64>();
        }
        u
    }

    pub fn dump(&self) -> PlanDump {
        PlanDump {
            certified_at: self.certified_at,
            gain_scale: self.tracking.gain_scale,
            states: self.trajectory.states.clone(),
            controls: self.trajectory.controls.clone(),
            gains: self
                .tracking
                .gains
                .iter()
                .map(|k| k.row_iter().map(|r| r.iter().cloned().collect()).collect())
                .collect(),
            remainders: self.tracking.remainders.clone(),
            tube: self.tube.dump(),
        }
    }
}

/// JSON view of a plan for debugging and counterexample bundles.
#[derive(Debug, Clone, Serialize)]
pub struct PlanDump {
    pub certified_at: usize,
    pub gain_scale: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Row-major gains per step.
    pub gains: Vec<Vec<Vec<f64>>>,
    pub remainders: Vec<Vec<f64>>,
    pub tube: Vec<ZonotopeDump>,
}

/// Why a robust check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckFailure {
    /// The nominal rollout itself enters the failure set at this step.
    Nominal(usize),
    /// The footprint-augmented tube meets the failure set at this step.
    Tube(usize),
    /// No gain scale keeps the tracking controls inside 𝒰.
    Controls,
    Riccati,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub failure: Option<CheckFailure>,
    pub gain_scale: f64,
}

/// Options of the robust rollout criterion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RobustOptions {
    pub tracking: TrackingOptions,
    /// Testing hook: certify on the nominal rollout alone, ignoring the tube.
    pub skip_tube: bool,
}

/// Gain scales tried in order until the control hulls fit 𝒰.
pub const GAIN_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.0];

/// Robust rollout criterion: the nominal rollout, its LQR tracking tube,
/// and the state and control checks over `τ = 0..=H`.
pub fn robust_check<S: System + ?Sized>(
    sys: &S,
    x: &[f64],
    u_task: &[f64],
    fallback: &dyn Controller,
    horizon: usize,
    t: usize,
    opts: &RobustOptions,
) -> (CheckOutcome, Option<FallbackPlan>) {
    let trajectory = nominal_rollout(sys, x, u_task, fallback, horizon, t);
    let fail = |f| {
        (
            CheckOutcome {
                passed: false,
                failure: Some(f),
                gain_scale: 0.0,
            },
            None,
        )
    };
    for tau in 1..=horizon + 1 {
        if sys.margin(&trajectory.states[tau]) < 0.0 {
            return fail(CheckFailure::Nominal(tau));
        }
    }
    let track = sys.track().expect("robust check needs a track");
    let pose_idx = sys.pose_indices().expect("robust check needs a pose");
    for &scale in &GAIN_SCALES {
        let (tracking, tube) = match build_plan(sys, &trajectory, &opts.tracking, scale) {
            Ok(p) => p,
            Err(_) => return fail(CheckFailure::Riccati),
        };
        let fits = (1..=horizon).all(|tau| {
            controls_within(&trajectory.controls[tau], &tracking.gains[tau], tube.at(tau), sys.control_set())
        });
        if !fits {
            continue;
        }
        let outcome = |failure: Option<CheckFailure>| CheckOutcome {
            passed: failure.is_none(),
            failure,
            gain_scale: scale,
        };
        if !opts.skip_tube {
            for tau in 1..=horizon + 1 {
                let s = &trajectory.states[tau];
                let pose = [s[pose_idx[0]], s[pose_idx[1]], s[pose_idx[2]]];
                let region = occupied_region(pose, tube.at(tau), pose_idx, &track.footprint);
                if violates_constraints(&region, track) {
                    return (outcome(Some(CheckFailure::Tube(tau))), None);
                }
            }
        }
        let plan = FallbackPlan {
            trajectory,
            tracking,
            tube,
            certified_at: t,
            age: 0,
        };
        return (outcome(None), Some(plan));
    }
    fail(CheckFailure::Controls)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Task,
    FallbackGain,
    FallbackPolicy,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Task => "task",
            Branch::FallbackGain => "fallback-gain",
            Branch::FallbackPolicy => "fallback-policy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Branch::Task, Branch::FallbackGain, Branch::FallbackPolicy]
            .into_iter()
            .find(|b| b.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterDecision {
    pub control: Vec<f64>,
    pub branch: Branch,
    pub check: CheckOutcome,
    /// Certification time of the plan in use, if any.
    pub plan_certified_at: Option<usize>,
    /// Step index `τ` within that plan.
    pub plan_age: Option<usize>,
}

/// Filter memory: the last certified plan and the current time.
#[derive(Debug, Clone, Default)]
pub struct FilterState {
    pub plan: Option<FallbackPlan>,
    pub t: usize,
}

/// One step of the switching filter.
pub fn filter_step<S: System + ?Sized>(
    state: &mut FilterState,
    sys: &S,
    x: &[f64],
    task: &dyn Controller,
    fallback: &dyn Controller,
    horizon: usize,
    opts: &RobustOptions,
    rng: &mut dyn RngCore,
) -> FilterDecision {
    let t = state.t;
    state.t += 1;
    let u_task = task.control(x, rng);
    let (check, plan) = robust_check(sys, x, &u_task, fallback, horizon, t, opts);
    if let Some(plan) = plan {
        let mut u = plan.trajectory.controls[0].clone();
        sys.control_set().clamp(&mut u);
        state.plan = Some(plan);
        return FilterDecision {
            control: u,
            branch: Branch::Task,
            check,
            plan_certified_at: Some(t),
            plan_age: Some(0),
        };
    }
    if let Some(plan) = state.plan.as_mut() {
        if plan.age < plan.trajectory.horizon {
            plan.age += 1;
            let mut u = plan.tracking_control(plan.age, x);
            sys.control_set().clamp(&mut u);
            return FilterDecision {
                control: u,
                branch: Branch::FallbackGain,
                check,
                plan_certified_at: Some(plan.certified_at),
                plan_age: Some(plan.age),
            };
        }
    }
    state.plan = None;
    let mut u = fallback.control(x, rng);
    sys.control_set().clamp(&mut u);
    FilterDecision {
        control: u,
        branch: Branch::FallbackPolicy,
        check,
        plan_certified_at: None,
        plan_age: None,
    }
}

/// One closed-loop step as recorded for auditing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub disturbance: Vec<f64>,
    pub branch: Branch,
    pub certified: bool,
    /// Margin of the successor state.
    pub margin_next: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorViolation {
    pub certified_at: usize,
    pub failed_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorVerdict {
    pub certified_steps: usize,
    pub violations: Vec<MonitorViolation>,
}

impl MonitorVerdict {
    pub fn safe(&self) -> bool {
        self.violations.is_empty()
    }
}

/// After each certified step `t`, the successors of steps `t..=t+H`
/// (states `t+1..=t+H+1`) must all have `g ≥ 0`.
pub fn certificate_monitor(trace: &[TraceStep], horizon: usize) -> MonitorVerdict {
    let mut violations = Vec::new();
    let mut certified_steps = 0;
    for (i, s) in trace.iter().enumerate() {
        if !s.certified {
            continue;
        }
        certified_steps += 1;
        let end = (i + horizon + 1).min(trace.len());
        if let Some(j) = (i..end).find(|&j| trace[j].margin_next < 0.0) {
            violations.push(MonitorViolation {
                certified_at: s.t,
                failed_at: trace[j].t + 1,
            });
        }
    }
    MonitorVerdict {
        certified_steps,
        violations,
    }
}

/// Plan, trace and tube of a monitored violation.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub violation: MonitorViolation,
    pub plan: Option<PlanDump>,
    pub trace: Vec<TraceStep>,
}

pub fn write_counterexample(path: &std::path::Path, cx: &Counterexample) -> Result<()> {
    let json = serde_json::to_string_pretty(cx)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
