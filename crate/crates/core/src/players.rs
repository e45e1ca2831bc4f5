//! Controllers and disturbances behind common object-safe interfaces.

use rand::{Rng, RngCore};

use crate::grid::{optimal_control, optimal_disturbance, ActionGrid, GridValueFunction};
use crate::nn::SquashedGaussianPolicy;
use crate::system::{BoxSet, System};

pub trait Controller: Send + Sync {
    fn control(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

/// A disturbance may observe the control applied at the same step.
pub trait Disturber: Send + Sync {
    fn disturbance(&self, x: &[f64], u: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Deterministic mode of a learned policy.
pub struct PolicyMode<'a>(pub &'a SquashedGaussianPolicy);

/// Stochastic samples of a learned policy.
pub struct PolicySampler<'a>(pub &'a SquashedGaussianPolicy);

impl Controller for PolicyMode<'_> {
    fn control(&self, x: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.mode(x).expect("policy input dimension")
    }
}

impl Controller for PolicySampler<'_> {
    fn control(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.sample(x, rng).expect("policy input dimension").0
    }
}

impl Disturber for PolicyMode<'_> {
    fn disturbance(&self, x: &[f64], _u: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.mode(x).expect("policy input dimension")
    }
}

impl Disturber for PolicySampler<'_> {
    fn disturbance(&self, x: &[f64], _u: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.sample(x, rng).expect("policy input dimension").0
    }
}

pub struct ZeroDisturbance(pub usize);

impl Disturber for ZeroDisturbance {
    fn disturbance(&self, _x: &[f64], _u: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Independent uniform draws from a box at every step.
pub struct UniformDisturbance(pub BoxSet);

impl Disturber for UniformDisturbance {
    fn disturbance(&self, _x: &[f64], _u: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        uniform_in(&self.0, rng)
    }
}

/// A random vertex of the box at every step.
pub struct CornerDisturbance(pub BoxSet);

impl Disturber for CornerDisturbance {
    fn disturbance(&self, _x: &[f64], _u: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.0.dim())
            .map(|i| if rng.random_bool(0.5) { self.0.hi[i] } else { self.0.lo[i] })
            .collect()
    }
}

pub fn uniform_in(b: &BoxSet, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..b.dim())
        .map(|i| {
            if b.hi[i] > b.lo[i] {
                rng.random_range(b.lo[i]..=b.hi[i])
            } else {
                b.lo[i]
            }
        })
        .collect()
}

/// Grid-oracle optimal control.
pub struct OracleController<'a, S: System + ?Sized> {
    pub value: &'a GridValueFunction,
    pub sys: &'a S,
    pub actions: &'a ActionGrid,
}

impl<S: System + ?Sized> Controller for OracleController<'_, S> {
    fn control(&self, x: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        optimal_control(self.value, self.sys, x, self.actions).0
    }
}

/// Grid-oracle worst-case disturbance against the observed control.
pub struct OracleDisturbance<'a, S: System + ?Sized> {
    pub value: &'a GridValueFunction,
    pub sys: &'a S,
    pub actions: &'a ActionGrid,
}

impl<S: System + ?Sized> Disturber for OracleDisturbance<'_, S> {
    fn disturbance(&self, x: &[f64], u: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        optimal_disturbance(self.value, self.sys, x, u, self.actions)
    }
}

/// Oracle disturbance that is replaced by a random vertex with probability `p`.
pub struct NoisyOracleDisturbance<'a, S: System + ?Sized> {
    pub oracle: OracleDisturbance<'a, S>,
    pub p_random: f64,
}

impl<S: System + ?Sized> Disturber for NoisyOracleDisturbance<'_, S> {
    fn disturbance(&self, x: &[f64], u: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        if rng.random_bool(self.p_random) {
            CornerDisturbance(self.oracle.sys.disturbance_set().clone()).disturbance(x, u, rng)
        } else {
            self.oracle.disturbance(x, u, rng)
        }
    }
}

/// Constant control.
pub struct ConstantController(pub Vec<f64>);

impl Controller for ConstantController {
    fn control(&self, _x: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.clone()
    }
}

/// Saturated lane keeper for the reduced car: yaw rate
/// `-k_py·py - k_psi·psi` squashed smoothly into the control bound.
pub struct LaneKeeper<'a, S: System + ?Sized> {
    pub sys: &'a S,
    pub k_py: f64,
    pub k_psi: f64,
}

impl<S: System + ?Sized> Controller for LaneKeeper<'_, S> {
    fn control(&self, x: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        let pose = self.sys.pose(x).expect("lane keeper needs a pose");
        let b = self.sys.control_set();
        let yaw_rate = -self.k_py * pose.py - self.k_psi * pose.psi;
        let idx = b.dim() - 1;
        let lim = b.hi[idx];
        let mut u = b.center();
        u[idx] = lim * (yaw_rate / lim).tanh();
        u
    }
}

/// Deterministic per-stream generator derived from a base seed.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mixed = splitmix(seed ^ splitmix(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ splitmix(index)));
    rand_chacha::ChaCha8Rng::seed_from_u64(mixed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
