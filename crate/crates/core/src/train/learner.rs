use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::{Adam, Critic, SquashedGaussianPolicy};
use crate::system::BoxSet;

use super::buffer::Batch;

/// How next-state disturbances `d'` are drawn for the critic target and
/// which disturbance the critic sees when no policy is trained.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetDisturbance {
    /// Learned disturbance policy (adversarial training).
    Policy,
    /// Always zero (single-player training).
    Zero,
    /// Uniform over the box (domain randomization).
    Uniform(BoxSet),
}

/// Critic, target critic, controller and optional disturbance with their
/// optimizers.
#[derive(Debug, Clone)]
pub struct Learner {
    pub critic: Critic,
    pub target: Critic,
    pub control: SquashedGaussianPolicy,
    pub disturbance: SquashedGaussianPolicy,
    pub target_disturbance: TargetDisturbance,
    pub train_control: bool,
    pub train_disturbance: bool,
    opt_critic: Adam,
    opt_control: Adam,
    opt_disturbance: Adam,
    /// Gradient steps taken (critic updates).
    pub steps: u64,
    pub control_updates: u64,
    pub disturbance_updates: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub control_loss: Option<f64>,
    pub disturbance_loss: Option<f64>,
}

/// Hyperparameters of one update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateParams {
    pub gamma: f64,
    pub target_rate: f64,
    pub alpha_control: f64,
    pub alpha_disturbance: f64,
    pub control_update_period: usize,
    pub divergence_threshold: f64,
}

/// Discounted safety target `y = (1 − γ) g' + γ min{g', Q'}`.
pub fn discounted_safety_target(g_next: f64, q_next: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * g_next + gamma * g_next.min(q_next)
}

impl Learner {
    pub fn new(
        critic: Critic,
        control: SquashedGaussianPolicy,
        disturbance: SquashedGaussianPolicy,
        target_disturbance: TargetDisturbance,
        lrs: [f64; 3],
    ) -> Self {
        let opt_critic = Adam::new(critic.net.param_count(), lrs[0]);
        let opt_control = Adam::new(control.net.param_count(), lrs[1]);
        let opt_disturbance = Adam::new(disturbance.net.param_count(), lrs[2]);
        Self {
            target: critic.clone(),
            critic,
            control,
            disturbance,
            target_disturbance,
            train_control: true,
            train_disturbance: false,
            opt_critic,
            opt_control,
            opt_disturbance,
            steps: 0,
            control_updates: 0,
            disturbance_updates: 0,
        }
    }

    /// Replaces the disturbance policy and resets its optimizer state.
    pub fn set_disturbance(&mut self, pi_d: SquashedGaussianPolicy, lr: f64) {
        self.opt_disturbance = Adam::new(pi_d.net.param_count(), lr);
        self.disturbance = pi_d;
    }

    fn next_disturbances(&self, xs: &DMatrix<f64>, rng: &mut dyn RngCore) -> Result<DMatrix<f64>> {
        let b = xs.ncols();
        Ok(match &self.target_disturbance {
            TargetDisturbance::Policy => {
                let eps = self.disturbance.noise(b, rng);
                self.disturbance.forward_sample(xs, &eps)?.actions
            }
            TargetDisturbance::Zero => DMatrix::zeros(self.disturbance.act_dim(), b),
            TargetDisturbance::Uniform(bx) => {
                let mut d = DMatrix::zeros(bx.dim(), b);
                for j in 0..b {
                    let v = crate::players::uniform_in(bx, rng);
                    d.column_mut(j).copy_from_slice(&v);
                }
                d
            }
        })
    }

    /// Targets from the target critic and freshly sampled next actions.
    pub fn critic_targets(&self, batch: &Batch, gamma: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let b = batch.len();
        let eps = self.control.noise(b, rng);
        let u_next = self.control.forward_sample(&batch.x_next, &eps)?.actions;
        let d_next = self.next_disturbances(&batch.x_next, rng)?;
        let q_next = self.target.q_batch(&batch.x_next, &u_next, &d_next)?;
        Ok((0..b)
            .map(|j| discounted_safety_target(batch.g_next[j], q_next[(0, j)], gamma))
            .collect())
    }

    /// One regression step of the critic toward `targets`, then the target
    /// critic's soft update. Returns the pre-step loss.
    pub fn critic_step(&mut self, batch: &Batch, targets: &[f64], params: &UpdateParams) -> Result<f64> {
        let b = batch.len() as f64;
        let (q, tape) = self.critic.q_tape(&batch.x, &batch.u, &batch.d)?;
        let mut grad = DMatrix::zeros(1, batch.len());
        let mut loss = 0.0;
        for j in 0..batch.len() {
            let r = q[(0, j)] - targets[j];
            loss += r * r / b;
            grad[(0, j)] = 2.0 * r / b;
        }
        if !loss.is_finite() || loss > params.divergence_threshold {
            return Err(Error::Diverged {
                update: self.steps as usize,
                reason: format!("critic loss {loss:e}"),
            });
        }
        let (g, _) = self.critic.backward(&tape, &grad);
        let mut p = self.critic.net.params();
        self.opt_critic.step(&mut p, &g.flatten());
        self.critic.net.set_params(&p);
        self.target.net.soft_update_from(&self.critic.net, params.target_rate);
        Ok(loss)
    }

    /// Controller step on `E[−Q(x, ũ, d) + α log π(ũ|x)]` with stored `d`.
    pub fn control_step(&mut self, batch: &Batch, alpha: f64, rng: &mut dyn RngCore) -> Result<f64> {
        let b = batch.len();
        let eps = self.control.noise(b, rng);
        let sample = self.control.forward_sample(&batch.x, &eps)?;
        let (q, tape) = self.critic.q_tape(&batch.x, &sample.actions, &batch.d)?;
        let seed = DMatrix::from_element(1, b, -1.0 / b as f64);
        let (_, gi) = self.critic.backward(&tape, &seed);
        let loss = (0..b).map(|j| -q[(0, j)] + alpha * sample.log_probs[j]).sum::<f64>() / b as f64;
        let gl = vec![alpha / b as f64; b];
        let (g, _) = self.control.backward(&sample, &gi.du, &gl);
        let mut p = self.control.net.params();
        self.opt_control.step(&mut p, &g.flatten());
        self.control.net.set_params(&p);
        self.control_updates += 1;
        Ok(loss)
    }

    /// Disturbance step on `E[+Q(x, u, d̃) + α log π(d̃|x)]` with stored `u`.
    pub fn disturbance_step(&mut self, batch: &Batch, alpha: f64, rng: &mut dyn RngCore) -> Result<f64> {
        let b = batch.len();
        let eps = self.disturbance.noise(b, rng);
        let sample = self.disturbance.forward_sample(&batch.x, &eps)?;
        let (q, tape) = self.critic.q_tape(&batch.x, &batch.u, &sample.actions)?;
        let seed = DMatrix::from_element(1, b, 1.0 / b as f64);
        let (_, gi) = self.critic.backward(&tape, &seed);
        let loss = (0..b).map(|j| q[(0, j)] + alpha * sample.log_probs[j]).sum::<f64>() / b as f64;
        let gl = vec![alpha / b as f64; b];
        let (g, _) = self.disturbance.backward(&sample, &gi.dd, &gl);
        let mut p = self.disturbance.net.params();
        self.opt_disturbance.step(&mut p, &g.flatten());
        self.disturbance.net.set_params(&p);
        self.disturbance_updates += 1;
        Ok(loss)
    }

    /// Critic, then disturbance every step, then controller on multiples
    /// of the control-update period.
    pub fn update(&mut self, batch: &Batch, params: &UpdateParams, rng: &mut dyn RngCore) -> Result<UpdateStats> {
        let targets = self.critic_targets(batch, params.gamma, rng)?;
        let critic_loss = self.critic_step(batch, &targets, params)?;
        let disturbance_loss = if self.train_disturbance {
            Some(self.disturbance_step(batch, params.alpha_disturbance, rng)?)
        } else {
            None
        };
        let control_loss = if self.train_control && self.steps.is_multiple_of(params.control_update_period as u64) {
            Some(self.control_step(batch, params.alpha_control, rng)?)
        } else {
            None
        };
        self.steps += 1;
        let finite = control_loss.is_none_or(f64::is_finite) && disturbance_loss.is_none_or(f64::is_finite);
        if !finite || !self.critic.net.is_finite() || !self.control.net.is_finite() || !self.disturbance.net.is_finite() {
            return Err(Error::Diverged {
                update: self.steps as usize,
                reason: "non-finite loss or parameters".into(),
            });
        }
        Ok(UpdateStats {
            critic_loss,
            control_loss,
            disturbance_loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_examples() {
        assert!((discounted_safety_target(1.0, 2.0, 0.9) - 1.0).abs() < 1e-12);
        assert!((discounted_safety_target(1.0, -1.0, 0.9) - (-0.8)).abs() < 1e-12);
        assert_eq!(discounted_safety_target(0.3, -7.0, 0.0), 0.3);
    }
}
