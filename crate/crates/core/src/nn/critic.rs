use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::system::System;

use super::mlp::{Activation, Gradients, MlpNet, Tape};

/// State–action–disturbance value `Q(x, u, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: MlpNet,
    pub state_dim: usize,
    pub control_dim: usize,
    pub disturbance_dim: usize,
}

/// Input gradients of a critic pass, split by argument.
#[derive(Debug, Clone)]
pub struct CriticInputGrads {
    pub dx: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub dd: DMatrix<f64>,
}

impl Critic {
    /// Inputs are normalized to the system's state, control and
    /// disturbance boxes.
    pub fn new<S: System + ?Sized, R: Rng + ?Sized>(sys: &S, hidden: &[usize], rng: &mut R) -> Self {
        let (n, m, k) = (sys.state_dim(), sys.control_dim(), sys.disturbance_dim());
        let mut sizes = vec![n + m + k];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut lo = sys.state_box().lo.clone();
        let mut hi = sys.state_box().hi.clone();
        lo.extend_from_slice(&sys.control_set().lo);
        hi.extend_from_slice(&sys.control_set().hi);
        lo.extend_from_slice(&sys.disturbance_set().lo);
        hi.extend_from_slice(&sys.disturbance_set().hi);
        let net = MlpNet::new(&sizes, Activation::Softplus, 1.0, rng).with_input_box(&lo, &hi);
        Self {
            net,
            state_dim: n,
            control_dim: m,
            disturbance_dim: k,
        }
    }

    pub fn from_net(net: MlpNet, state_dim: usize, control_dim: usize, disturbance_dim: usize) -> Result<Self> {
        let want = state_dim + control_dim + disturbance_dim;
        if net.input_dim() != want || net.output_dim() != 1 {
            return Err(Error::Shape {
                expected: want,
                actual: net.input_dim(),
            });
        }
        Ok(Self {
            net,
            state_dim,
            control_dim,
            disturbance_dim,
        })
    }

    pub fn q(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<f64> {
        let mut input = Vec::with_capacity(x.len() + u.len() + d.len());
        input.extend_from_slice(x);
        input.extend_from_slice(u);
        input.extend_from_slice(d);
        Ok(self.net.forward(&input)?[0])
    }

    fn stack(&self, xs: &DMatrix<f64>, us: &DMatrix<f64>, ds: &DMatrix<f64>) -> DMatrix<f64> {
        let b = xs.ncols();
        let (n, m, k) = (self.state_dim, self.control_dim, self.disturbance_dim);
        let mut input = DMatrix::zeros(n + m + k, b);
        input.rows_mut(0, n).copy_from(xs);
        input.rows_mut(n, m).copy_from(us);
        input.rows_mut(n + m, k).copy_from(ds);
        input
    }

    /// Batched `Q` values as a `1 × B` row.
    pub fn q_batch(&self, xs: &DMatrix<f64>, us: &DMatrix<f64>, ds: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.net.forward_batch(&self.stack(xs, us, ds))
    }

    pub fn q_tape(&self, xs: &DMatrix<f64>, us: &DMatrix<f64>, ds: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        self.net.forward_tape(&self.stack(xs, us, ds))
    }

    pub fn backward(&self, tape: &Tape, grad_q: &DMatrix<f64>) -> (Gradients, CriticInputGrads) {
        let (g, gi) = self.net.backward(tape, grad_q);
        let (n, m, k) = (self.state_dim, self.control_dim, self.disturbance_dim);
        (
            g,
            CriticInputGrads {
                dx: gi.rows(0, n).into_owned(),
                du: gi.rows(n, m).into_owned(),
                dd: gi.rows(n + m, k).into_owned(),
            },
        )
    }
}
