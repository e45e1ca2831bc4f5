use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Hyperparameters of adversarial actor-critic training and its baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub gamma: f64,
    /// When set, γ is annealed linearly to this value over the run.
    pub gamma_final: Option<f64>,
    pub lr_critic: f64,
    pub lr_control: f64,
    pub lr_disturbance: f64,
    /// Target-critic averaging rate.
    pub target_rate: f64,
    /// Controller updated once per this many critic/disturbance updates.
    pub control_update_period: usize,
    pub alpha_control: f64,
    pub alpha_disturbance: f64,
    /// Multiplicative temperature decay per gradient step.
    pub alpha_decay: f64,
    pub alpha_floor: f64,
    pub episode_length: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Hidden-layer activation of all three networks.
    pub activation: Activation,
    /// Gradient steps per collected environment step.
    pub updates_per_step: f64,
    /// Uniform random controls for this many steps before learning starts.
    pub warmup_steps: usize,
    pub leaderboard_controls: usize,
    pub leaderboard_disturbances: usize,
    pub match_count: usize,
    pub softmax_temperature: f64,
    /// Data-collection environment steps between leaderboard updates.
    pub steps_per_round: usize,
    /// Budget of the single-player warm start (d ≡ 0).
    pub warmup_phase_steps: usize,
    /// Budget of disturbance-only training against the frozen controller.
    pub disturbance_phase_steps: usize,
    /// Total environment-step budget of each method, warm start included.
    pub total_steps: usize,
    pub eval_episodes: usize,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.99,
            gamma_final: None,
            lr_critic: 1e-3,
            lr_control: 3e-4,
            lr_disturbance: 3e-4,
            target_rate: 0.005,
            control_update_period: 2,
            alpha_control: 0.05,
            alpha_disturbance: 0.05,
            alpha_decay: 0.99995,
            alpha_floor: 1e-3,
            episode_length: 200,
            batch_size: 128,
            buffer_capacity: 200_000,
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            activation: Activation::Relu,
            updates_per_step: 1.0,
            warmup_steps: 5_000,
            leaderboard_controls: 5,
            leaderboard_disturbances: 5,
            match_count: 20,
            softmax_temperature: 1.0,
            steps_per_round: 10_000,
            warmup_phase_steps: 90_000,
            disturbance_phase_steps: 0,
            total_steps: 300_000,
            eval_episodes: 20,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if let Some(g) = self.gamma_final {
            if !(g >= self.gamma && g < 1.0) {
                return bad("gamma_final must lie in [gamma, 1)");
            }
        }
        if self.control_update_period == 0 {
            return bad("control_update_period must be at least 1");
        }
        for (name, v) in [
            ("lr_critic", self.lr_critic),
            ("lr_control", self.lr_control),
            ("lr_disturbance", self.lr_disturbance),
            ("target_rate", self.target_rate),
            ("softmax_temperature", self.softmax_temperature),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay <= 1.0) {
            return bad("alpha_decay must lie in (0, 1]");
        }
        if self.alpha_control < 0.0 || self.alpha_disturbance < 0.0 || self.alpha_floor < 0.0 {
            return bad("entropy temperatures must be nonnegative");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer capacity must hold at least one batch");
        }
        if self.episode_length == 0 || self.steps_per_round == 0 {
            return bad("episode_length and steps_per_round must be positive");
        }
        if self.leaderboard_controls == 0 || self.leaderboard_disturbances == 0 {
            return bad("leaderboard capacities must be positive");
        }
        if self.warmup_phase_steps + self.disturbance_phase_steps > self.total_steps {
            return bad("phase budgets exceed total_steps");
        }
        Ok(())
    }

    /// Entropy temperature after `k` gradient steps.
    pub fn alpha_at(&self, alpha0: f64, k: u64) -> f64 {
        (alpha0 * self.alpha_decay.powf(k as f64)).max(self.alpha_floor.min(alpha0))
    }

    /// Discount after `steps` of `total` collected steps.
    pub fn gamma_at(&self, steps: usize) -> f64 {
        match self.gamma_final {
            Some(g1) => {
                let frac = (steps as f64 / self.total_steps.max(1) as f64).min(1.0);
                self.gamma + (g1 - self.gamma) * frac
            }
            None => self.gamma,
        }
    }
}
