//! Adversarial soft actor-critic training of a safety controller and a
//! failure-seeking disturbance, plus the single-player and
//! domain-randomized baselines.
//!
//! All three methods share a warm start: a single-player run with `d ≡ 0`.
//! Plain SAC continues that run; the randomized baseline switches to
//! uniform disturbances; the adversarial method first trains a disturbance
//! against the frozen controller and then alternates joint updates with
//! leaderboard tournaments.

pub mod buffer;
pub mod config;
pub mod leaderboard;
pub mod learner;

use std::fs;
use std::path::Path;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{io, Critic, SquashedGaussianPolicy};
use crate::players::{
    stream_rng, uniform_in, Controller, Disturber, PolicyMode, PolicySampler, UniformDisturbance,
    ZeroDisturbance,
};
use crate::system::System;
use crate::vehicle::sample_initial_state;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use config::TrainConfig;
pub use leaderboard::{Leaderboard, LeaderboardSnapshot, MatchRecord};
pub use learner::{discounted_safety_target, Learner, TargetDisturbance, UpdateParams, UpdateStats};

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_TOURNAMENT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Single-player soft actor-critic, `d ≡ 0`.
    Sac,
    /// Uniformly randomized disturbances.
    SacDr,
    /// Learned adversarial disturbance with a leaderboard.
    Adversarial,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sac => "sac",
            Method::SacDr => "sac-dr",
            Method::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    WarmStart,
    Randomized,
    DisturbanceOnly,
    Joint,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub phase: Phase,
    pub env_steps: usize,
    pub grad_steps: u64,
    pub critic_loss: f64,
    pub control_loss: f64,
    pub disturbance_loss: f64,
    pub alpha_control: f64,
    pub alpha_disturbance: f64,
    pub gamma: f64,
    pub eval_safe_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub steps: usize,
    pub safe: bool,
}

/// Plays one episode from `x0`, stopping at the first state with `g < 0`
/// or after `max_len` steps. Transitions are appended to `sink`.
pub fn run_episode<S: System + ?Sized>(
    sys: &S,
    x0: &[f64],
    controller: &dyn Controller,
    disturber: &dyn Disturber,
    max_len: usize,
    rng: &mut dyn RngCore,
    mut sink: Option<&mut Vec<Transition>>,
) -> EpisodeOutcome {
    let mut x = x0.to_vec();
    let mut next = vec![0.0; sys.state_dim()];
    for t in 0..max_len {
        let u = controller.control(&x, rng);
        let d = disturber.disturbance(&x, &u, rng);
        sys.step(&x, &u, &d, &mut next);
        let g = sys.margin(&next);
        if let Some(s) = sink.as_deref_mut() {
            s.push(Transition {
                x: x.clone(),
                u: u.clone(),
                d: d.clone(),
                x_next: next.clone(),
                g_next: g,
            });
        }
        if g < 0.0 {
            return EpisodeOutcome { steps: t + 1, safe: false };
        }
        std::mem::swap(&mut x, &mut next);
    }
    EpisodeOutcome {
        steps: max_len,
        safe: true,
    }
}

/// Safe rate of `controller` against `disturber` over `episodes` initial
/// states drawn from the seeded evaluation stream.
pub fn evaluate_safe_rate<S: System + ?Sized>(
    sys: &S,
    controller: &dyn Controller,
    disturber: &dyn Disturber,
    episodes: usize,
    episode_length: usize,
    seed: u64,
    stream: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let mut safe = 0;
    for i in 0..episodes {
        let mut rng = stream_rng(seed, stream, i as u64);
        let x0 = sample_initial_state(sys, &mut rng)?;
        if run_episode(sys, &x0, controller, disturber, episode_length, &mut rng, None).safe {
            safe += 1;
        }
    }
    Ok(safe as f64 / episodes as f64)
}

/// Mutable state of a training run, clonable to branch methods off a
/// shared warm start.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub learner: Learner,
    pub buffer: ReplayBuffer,
    pub env_steps: usize,
    pub log: Vec<LogRow>,
    pub round: usize,
    rng: ChaCha8Rng,
    pending_updates: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub method: Method,
    pub control: SquashedGaussianPolicy,
    pub disturbance: Option<SquashedGaussianPolicy>,
    pub critic: Critic,
    pub leaderboard: Option<LeaderboardSnapshot>,
    pub log: Vec<LogRow>,
    pub env_steps: usize,
}

enum Opponent<'a> {
    Zero,
    Uniform,
    Learned,
    Board(&'a Leaderboard<SquashedGaussianPolicy, SquashedGaussianPolicy>),
}

impl TrainState {
    pub fn new<S: System + ?Sized>(sys: &S, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, STREAM_TRAIN, 0);
        let obs = sys.state_box();
        let mut critic = Critic::new(sys, &cfg.critic_hidden, &mut rng);
        let mut control = SquashedGaussianPolicy::new(obs, &cfg.policy_hidden, sys.control_set(), &mut rng);
        let mut disturbance =
            SquashedGaussianPolicy::new(obs, &cfg.policy_hidden, sys.disturbance_set(), &mut rng);
        for net in [&mut critic.net, &mut control.net, &mut disturbance.net] {
            net.hidden = cfg.activation;
        }
        let learner = Learner::new(
            critic,
            control,
            disturbance,
            TargetDisturbance::Zero,
            [cfg.lr_critic, cfg.lr_control, cfg.lr_disturbance],
        );
        Ok(Self {
            learner,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            env_steps: 0,
            log: Vec::new(),
            round: 0,
            rng,
            pending_updates: 0.0,
        })
    }

    fn update_params(&self, cfg: &TrainConfig) -> UpdateParams {
        UpdateParams {
            gamma: cfg.gamma_at(self.env_steps),
            target_rate: cfg.target_rate,
            alpha_control: cfg.alpha_at(cfg.alpha_control, self.learner.steps),
            alpha_disturbance: cfg.alpha_at(cfg.alpha_disturbance, self.learner.steps),
            control_update_period: cfg.control_update_period,
            divergence_threshold: cfg.divergence_threshold,
        }
    }

    /// Collects episodes until `until_steps` environment steps, running
    /// gradient steps after each episode. Logs every `steps_per_round`.
    fn run_phase<S: System + ?Sized>(
        &mut self,
        sys: &S,
        cfg: &TrainConfig,
        phase: Phase,
        until_steps: usize,
        opponent: &Opponent,
        checkpoint_dir: Option<&Path>,
    ) -> Result<()> {
        let mut acc = LossAccumulator::default();
        let mut next_log = self.env_steps + cfg.steps_per_round;
        let mut last_good = self.learner.clone();
        while self.env_steps < until_steps {
            let max_len = cfg.episode_length.min(until_steps - self.env_steps);
            let x0 = sample_initial_state(sys, &mut self.rng)?;
            let mut transitions = Vec::with_capacity(max_len);
            {
                let random_controls = self.env_steps < cfg.warmup_steps;
                let rc = RandomController(sys.control_set().clone());
                let sampler = PolicySampler(&self.learner.control);
                let controller: &dyn Controller = if random_controls { &rc } else { &sampler };
                let zero = ZeroDisturbance(sys.disturbance_dim());
                let uniform = UniformDisturbance(sys.disturbance_set().clone());
                let learned = PolicySampler(&self.learner.disturbance);
                let board_pick = match opponent {
                    Opponent::Board(lb) => lb.sample_disturbance(&mut self.rng).cloned(),
                    _ => None,
                };
                let board_sampler = board_pick.as_ref().map(PolicySampler);
                let disturber: &dyn Disturber = match opponent {
                    Opponent::Zero => &zero,
                    Opponent::Uniform => &uniform,
                    Opponent::Learned => &learned,
                    Opponent::Board(_) => match &board_sampler {
                        Some(s) => s,
                        None => &learned,
                    },
                };
                run_episode(sys, &x0, controller, disturber, max_len, &mut self.rng, Some(&mut transitions));
            }
            self.env_steps += transitions.len();
            let collected = transitions.len();
            for t in transitions {
                self.buffer.push(t);
            }
            if self.env_steps >= cfg.warmup_steps && self.buffer.len() >= cfg.batch_size {
                self.pending_updates += collected as f64 * cfg.updates_per_step;
                while self.pending_updates >= 1.0 {
                    self.pending_updates -= 1.0;
                    let batch = self.buffer.sample(cfg.batch_size, &mut self.rng);
                    let params = self.update_params(cfg);
                    match self.learner.update(&batch, &params, &mut self.rng) {
                        Ok(stats) => acc.add(&stats),
                        Err(e) => {
                            if let Some(dir) = checkpoint_dir {
                                save_learner(&last_good, &dir.join("last_good"))?;
                            }
                            return Err(e);
                        }
                    }
                }
            }
            if self.env_steps >= next_log || self.env_steps >= until_steps {
                next_log = self.env_steps + cfg.steps_per_round;
                self.log_round(sys, cfg, phase, &mut acc)?;
                last_good = self.learner.clone();
                if let Some(dir) = checkpoint_dir {
                    save_learner(&self.learner, &dir.join("latest"))?;
                }
            }
        }
        Ok(())
    }

    fn log_round<S: System + ?Sized>(
        &mut self,
        sys: &S,
        cfg: &TrainConfig,
        phase: Phase,
        acc: &mut LossAccumulator,
    ) -> Result<()> {
        let zero = ZeroDisturbance(sys.disturbance_dim());
        let learned = PolicyMode(&self.learner.disturbance);
        let eval_d: &dyn Disturber = match phase {
            Phase::DisturbanceOnly | Phase::Joint => &learned,
            _ => &zero,
        };
        let eval = evaluate_safe_rate(
            sys,
            &PolicyMode(&self.learner.control),
            eval_d,
            cfg.eval_episodes,
            cfg.episode_length,
            cfg.seed,
            STREAM_EVAL,
        )?;
        let params = self.update_params(cfg);
        self.log.push(LogRow {
            round: self.round,
            phase,
            env_steps: self.env_steps,
            grad_steps: self.learner.steps,
            critic_loss: acc.mean(0),
            control_loss: acc.mean(1),
            disturbance_loss: acc.mean(2),
            alpha_control: params.alpha_control,
            alpha_disturbance: params.alpha_disturbance,
            gamma: params.gamma,
            eval_safe_rate: eval,
        });
        *acc = LossAccumulator::default();
        self.round += 1;
        Ok(())
    }
}

struct RandomController(crate::system::BoxSet);

impl Controller for RandomController {
    fn control(&self, _x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        uniform_in(&self.0, rng)
    }
}

#[derive(Default)]
struct LossAccumulator {
    sums: [f64; 3],
    counts: [usize; 3],
}

impl LossAccumulator {
    fn add(&mut self, s: &UpdateStats) {
        for (i, v) in [Some(s.critic_loss), s.control_loss, s.disturbance_loss].into_iter().enumerate() {
            if let Some(v) = v {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
    }

    fn mean(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            f64::NAN
        } else {
            self.sums[i] / self.counts[i] as f64
        }
    }
}

fn save_learner(l: &Learner, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::save_policy(&l.control, &dir.join("control.bin"))?;
    io::save_policy(&l.disturbance, &dir.join("disturbance.bin"))?;
    io::save_critic(&l.critic, &dir.join("critic.bin"))
}

/// Single-player warm start with `d ≡ 0` for `warmup_phase_steps`.
pub fn warm_start<S: System + ?Sized>(sys: &S, cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainState> {
    let mut state = TrainState::new(sys, cfg)?;
    state.run_phase(sys, cfg, Phase::WarmStart, cfg.warmup_phase_steps, &Opponent::Zero, checkpoint_dir)?;
    Ok(state)
}

/// Continues a warm start with the given method up to `total_steps`.
pub fn train_from<S: System + ?Sized>(
    sys: &S,
    cfg: &TrainConfig,
    method: Method,
    mut state: TrainState,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut snapshot = None;
    match method {
        Method::Sac => {
            state.run_phase(sys, cfg, Phase::WarmStart, cfg.total_steps, &Opponent::Zero, checkpoint_dir)?;
        }
        Method::SacDr => {
            state.learner.target_disturbance = TargetDisturbance::Uniform(sys.disturbance_set().clone());
            state.run_phase(sys, cfg, Phase::Randomized, cfg.total_steps, &Opponent::Uniform, checkpoint_dir)?;
        }
        Method::Adversarial => {
            state.learner.target_disturbance = TargetDisturbance::Policy;
            state.learner.train_control = false;
            state.learner.train_disturbance = true;
            let until = state.env_steps + cfg.disturbance_phase_steps;
            state.run_phase(sys, cfg, Phase::DisturbanceOnly, until, &Opponent::Learned, checkpoint_dir)?;

            state.learner.train_control = true;
            let mut board = Leaderboard::new(
                cfg.leaderboard_controls,
                cfg.leaderboard_disturbances,
                cfg.softmax_temperature,
            );
            let mut tournament = 0u64;
            let mut play_round = |board: &mut Leaderboard<_, _>, l: &Learner| -> Result<()> {
                let base = tournament * 1_000_003;
                tournament += 1;
                // Shared initial states for every pairing of this round.
                let starts = (0..cfg.match_count)
                    .map(|i| {
                        let mut rng = stream_rng(cfg.seed, STREAM_TOURNAMENT, base + i as u64);
                        sample_initial_state(sys, &mut rng).map(|x| (x, rng))
                    })
                    .collect::<Result<Vec<_>>>()?;
                board.tournament_update(l.control.clone(), l.disturbance.clone(), |u: &SquashedGaussianPolicy, d: &SquashedGaussianPolicy| {
                    let mut rec = MatchRecord::default();
                    for (x0, rng) in &starts {
                        let mut rng = rng.clone();
                        let out = run_episode(sys, x0, &PolicyMode(u), &PolicyMode(d), cfg.episode_length, &mut rng, None);
                        rec.played += 1;
                        rec.safe += out.safe as usize;
                    }
                    rec
                });
                Ok(())
            };
            play_round(&mut board, &state.learner)?;
            while state.env_steps < cfg.total_steps {
                let until = (state.env_steps + cfg.steps_per_round).min(cfg.total_steps);
                state.run_phase(sys, cfg, Phase::Joint, until, &Opponent::Board(&board), checkpoint_dir)?;
                play_round(&mut board, &state.learner)?;
            }
            snapshot = Some(board.snapshot());
        }
    }
    Ok(TrainOutcome {
        method,
        control: state.learner.control.clone(),
        disturbance: match method {
            Method::Adversarial => Some(state.learner.disturbance.clone()),
            _ => None,
        },
        critic: state.learner.critic.clone(),
        leaderboard: snapshot,
        log: state.log,
        env_steps: state.env_steps,
    })
}

/// Full run of one method from scratch.
pub fn train<S: System + ?Sized>(sys: &S, cfg: &TrainConfig, method: Method, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = warm_start(sys, cfg, checkpoint_dir)?;
    train_from(sys, cfg, method, state, checkpoint_dir)
}

/// Critic-derived value `(1−γ) g + γ min{g, Q(x, π_u(x), π_d(x))}` with
/// deterministic policy modes (zero disturbance when none is given).
pub fn critic_value<S: System + ?Sized>(
    sys: &S,
    critic: &Critic,
    control: &SquashedGaussianPolicy,
    disturbance: Option<&SquashedGaussianPolicy>,
    gamma: f64,
    x: &[f64],
) -> Result<f64> {
    let u = control.mode(x)?;
    let d = match disturbance {
        Some(p) => p.mode(x)?,
        None => vec![0.0; sys.disturbance_dim()],
    };
    let g = sys.margin(x);
    Ok((1.0 - gamma) * g + gamma * g.min(critic.q(x, &u, &d)?))
}

/// Writes the training log as CSV.
pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut s = String::from(
        "round,phase,env_steps,grad_steps,critic_loss,control_loss,disturbance_loss,alpha_control,alpha_disturbance,gamma,eval_safe_rate\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            serde_json::to_value(r.phase)?.as_str().unwrap_or(""),
            r.env_steps,
            r.grad_steps,
            r.critic_loss,
            r.control_loss,
            r.disturbance_loss,
            r.alpha_control,
            r.alpha_disturbance,
            r.gamma,
            r.eval_safe_rate
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Saves the trained networks (and leaderboard snapshot) under `dir`.
pub fn save_outcome(out: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::save_policy(&out.control, &dir.join("control.bin"))?;
    if let Some(d) = &out.disturbance {
        io::save_policy(d, &dir.join("disturbance.bin"))?;
    }
    io::save_critic(&out.critic, &dir.join("critic.bin"))?;
    write_log_csv(&out.log, &dir.join("train_log.csv"))?;
    if let Some(lb) = &out.leaderboard {
        let p = dir.join("leaderboard.json");
        fs::write(&p, serde_json::to_string_pretty(lb)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
