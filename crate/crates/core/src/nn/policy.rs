use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::system::BoxSet;

use super::mlp::{softplus, Activation, Gradients, MlpNet, Tape};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian policy squashed by `tanh` and mapped affinely onto a box.
///
/// The backbone emits `[mean; log_std]` per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    pub net: MlpNet,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Batched reparameterized sample with everything needed for backprop.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: DMatrix<f64>,
    pub log_probs: DVector<f64>,
    tape: Tape,
    eps: DMatrix<f64>,
    pre: DMatrix<f64>,
    log_std: DMatrix<f64>,
    log_std_clamped: DMatrix<bool>,
}

impl SquashedGaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_box: &BoxSet,
        hidden: &[usize],
        action_box: &BoxSet,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_box.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_box.dim());
        let net = MlpNet::new(&sizes, Activation::Softplus, 0.1, rng)
            .with_input_box(&obs_box.lo, &obs_box.hi);
        Self {
            net,
            low: action_box.lo.clone(),
            high: action_box.hi.clone(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.low.len()
    }

    fn center(&self, i: usize) -> f64 {
        0.5 * (self.low[i] + self.high[i])
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.high[i] - self.low[i])
    }

    /// Deterministic action `center + half · tanh(mean)`.
    pub fn mode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(x)?;
        Ok((0..self.act_dim())
            .map(|i| self.center(i) + self.half(i) * out[i].tanh())
            .collect())
    }

    /// `(mean, log_std)` before squashing, with the log-std clamp applied.
    pub fn distribution(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.net.forward(x)?;
        let m = self.act_dim();
        Ok((
            out[..m].to_vec(),
            out[m..].iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
        ))
    }

    /// One stochastic action and its log-density in action space.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let xs = DMatrix::from_column_slice(x.len(), 1, x);
        let eps = DMatrix::from_fn(self.act_dim(), 1, |_, _| rng.sample(StandardNormal));
        let s = self.forward_sample(&xs, &eps)?;
        Ok((s.actions.as_slice().to_vec(), s.log_probs[0]))
    }

    /// Draws standard-normal noise for a batch.
    pub fn noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> DMatrix<f64> {
        DMatrix::from_fn(self.act_dim(), batch, |_, _| rng.sample(StandardNormal))
    }

    /// Reparameterized batch sample `a = c + h·tanh(μ + σ ε)`.
    pub fn forward_sample(&self, xs: &DMatrix<f64>, eps: &DMatrix<f64>) -> Result<PolicySample> {
        let (out, tape) = self.net.forward_tape(xs)?;
        let m = self.act_dim();
        let b = xs.ncols();
        let mut actions = DMatrix::zeros(m, b);
        let mut pre = DMatrix::zeros(m, b);
        let mut log_std = DMatrix::zeros(m, b);
        let mut clamped = DMatrix::from_element(m, b, false);
        let mut log_probs = DVector::zeros(b);
        for j in 0..b {
            let mut lp = 0.0;
            for i in 0..m {
                let raw = out[(m + i, j)];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                clamped[(i, j)] = raw != ls;
                let e = eps[(i, j)];
                let z = out[(i, j)] + ls.exp() * e;
                let t = z.tanh();
                actions[(i, j)] = self.center(i) + self.half(i) * t;
                pre[(i, j)] = z;
                log_std[(i, j)] = ls;
                lp += -0.5 * e * e - ls - HALF_LOG_2PI - log_one_minus_tanh_sq(z) - self.half(i).ln();
            }
            log_probs[j] = lp;
        }
        Ok(PolicySample {
            actions,
            log_probs,
            tape,
            eps: eps.clone(),
            pre,
            log_std,
            log_std_clamped: clamped,
        })
    }

    /// Backprop of `Σ_j [⟨grad_actions_j, a_j⟩ + grad_log_probs_j · log π(a_j)]`
    /// through the reparameterized sample.
    pub fn backward(
        &self,
        sample: &PolicySample,
        grad_actions: &DMatrix<f64>,
        grad_log_probs: &[f64],
    ) -> (Gradients, DMatrix<f64>) {
        let m = self.act_dim();
        let b = sample.actions.ncols();
        let mut grad_out = DMatrix::zeros(2 * m, b);
        for j in 0..b {
            let beta = grad_log_probs[j];
            for i in 0..m {
                let z = sample.pre[(i, j)];
                let t = z.tanh();
                // dL/dz: through the action, plus d(-log(1 - tanh²z))/dz = 2 tanh z.
                let dz = grad_actions[(i, j)] * self.half(i) * (1.0 - t * t) + beta * 2.0 * t;
                grad_out[(i, j)] = dz;
                if !sample.log_std_clamped[(i, j)] {
                    let sigma_eps = sample.log_std[(i, j)].exp() * sample.eps[(i, j)];
                    grad_out[(m + i, j)] = dz * sigma_eps - beta;
                }
            }
        }
        self.net.backward(&sample.tape, &grad_out)
    }

    /// Density of action `a` at state `x` (used by quadrature checks).
    pub fn log_prob(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        let (mean, log_std) = self.distribution(x)?;
        let mut lp = 0.0;
        for i in 0..self.act_dim() {
            let y = ((a[i] - self.center(i)) / self.half(i)).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
            let z = y.atanh();
            let e = (z - mean[i]) / log_std[i].exp();
            lp += -0.5 * e * e - log_std[i] - HALF_LOG_2PI - log_one_minus_tanh_sq(z) - self.half(i).ln();
        }
        Ok(lp)
    }
}

/// `ln(1 − tanh² z) = 2 (ln 2 − z − softplus(−2z))`, stable for large |z|.
fn log_one_minus_tanh_sq(z: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z))
}
