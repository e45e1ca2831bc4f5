//! One-dimensional toy safety game used as a brute-force reference.
//!
//! `x' = clamp(x + u + d, -2, 2)`, `u ∈ [-1, 1]`, `d ∈ [-1/2, 1/2]`,
//! `g(x) = 1 - |x|`.

use nalgebra::DMatrix;

use crate::system::{BoxSet, Pose, System};

#[derive(Debug, Clone)]
pub struct ToyGame {
    controls: BoxSet,
    disturbances: BoxSet,
    states: BoxSet,
}

impl Default for ToyGame {
    fn default() -> Self {
        Self::new(0.5)
    }
}

impl ToyGame {
    pub fn new(d_max: f64) -> Self {
        Self {
            controls: BoxSet::new(vec![-1.0], vec![1.0]),
            disturbances: BoxSet::new(vec![-d_max], vec![d_max]),
            states: BoxSet::new(vec![-2.0], vec![2.0]),
        }
    }
}

impl System for ToyGame {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        1.0
    }
    fn control_set(&self) -> &BoxSet {
        &self.controls
    }
    fn disturbance_set(&self) -> &BoxSet {
        &self.disturbances
    }
    fn state_box(&self) -> &BoxSet {
        &self.states
    }

    fn derivative(&self, _x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        out[0] = u[0] + d[0];
    }

    fn derivative_jacobians(
        &self,
        _x: &[f64],
        _u: &[f64],
        _d: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
    }

    fn step_raw(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        out[0] = (x[0] + u[0] + d[0]).clamp(-2.0, 2.0);
    }

    fn margin(&self, x: &[f64]) -> f64 {
        1.0 - x[0].abs()
    }

    fn pose(&self, _x: &[f64]) -> Option<Pose> {
        None
    }
}
