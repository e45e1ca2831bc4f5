use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Softplus,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fully-connected network: `hidden` activation between layers, identity
/// on the output. Inputs are normalized as `(x - shift) * scale` first.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Cached activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer (normalized input first).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<DMatrix<f64>>,
}

/// Gradients with the same shapes as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    /// Flat vector in [`MlpNet::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }
}

impl MlpNet {
    /// Layer widths `sizes[0] → … → sizes[last]`, uniform fan-in
    /// initialization. The output layer is scaled by `output_gain`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let mut bound = 1.0 / (fan_in as f64).sqrt();
                if i + 1 == n_layers {
                    bound *= output_gain;
                }
                Layer {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-1.0..=1.0) * bound
                    }),
                    bias: DVector::from_fn(fan_out, |_, _| rng.random_range(-1.0..=1.0) * bound),
                }
            })
            .collect();
        Self {
            layers,
            hidden,
            input_shift: vec![0.0; sizes[0]],
            input_scale: vec![1.0; sizes[0]],
        }
    }

    /// Builds a network from explicit layers after checking shapes.
    pub fn from_layers(layers: Vec<Layer>, hidden: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::Shape {
                    expected: l.weight.nrows(),
                    actual: l.bias.len(),
                });
            }
        }
        for w in layers.windows(2) {
            if w[1].weight.ncols() != w[0].weight.nrows() {
                return Err(Error::Shape {
                    expected: w[0].weight.nrows(),
                    actual: w[1].weight.ncols(),
                });
            }
        }
        let n_in = layers[0].weight.ncols();
        Ok(Self {
            layers,
            hidden,
            input_shift: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
        })
    }

    /// Normalizes inputs so that `box` maps to `[-1, 1]`.
    pub fn with_input_box(mut self, lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), self.input_dim());
        for i in 0..lo.len() {
            let half = 0.5 * (hi[i] - lo[i]);
            self.input_shift[i] = 0.5 * (hi[i] + lo[i]);
            self.input_scale[i] = if half > 0.0 { 1.0 / half } else { 1.0 };
        }
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.nrows()));
        s
    }

    /// `Σ (n_i · n_{i+1} + n_{i+1})` over consecutive widths.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&p[k..k + n]);
            k += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&p[k..k + n]);
            k += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: rows,
            });
        }
        Ok(())
    }

    fn normalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for mut col in z.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.input_shift[i]) * self.input_scale[i];
            }
        }
        z
    }

    /// Single-input evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let input = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forward_batch(&input)?.as_slice().to_vec())
    }

    /// Batched evaluation; one sample per column.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_tape(x)?.0)
    }

    pub fn forward_tape(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape)> {
        self.check_input(x.nrows())?;
        let mut a = self.normalize(x);
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len() - 1),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            tape.inputs.push(a);
            if i == last {
                return Ok((z, tape));
            }
            a = z.map(|v| self.hidden.apply(v));
            tape.pre.push(z);
        }
        unreachable!()
    }

    /// Reverse pass: parameter gradients summed over the batch, and the
    /// gradient with respect to the raw (unnormalized) input.
    pub fn backward(&self, tape: &Tape, grad_out: &DMatrix<f64>) -> (Gradients, DMatrix<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            grads.layers[i].weight = &delta * input.transpose();
            grads.layers[i].bias = delta.column_sum();
            let mut back = self.layers[i].weight.transpose() * &delta;
            if i > 0 {
                let pre = &tape.pre[i - 1];
                back.zip_apply(pre, |g, z| *g *= self.hidden.derivative(z));
            }
            delta = back;
        }
        for mut col in delta.column_iter_mut() {
            for j in 0..col.len() {
                col[j] *= self.input_scale[j];
            }
        }
        (grads, delta)
    }

    /// `self ← τ·source + (1−τ)·self`.
    pub fn soft_update_from(&mut self, source: &MlpNet, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weight.zip_apply(&s.weight, |a, b| *a = tau * b + (1.0 - tau) * *a);
            t.bias.zip_apply(&s.bias, |a, b| *a = tau * b + (1.0 - tau) * *a);
        }
    }
}

/// Elementwise Polyak averaging of `target` toward `source`.
pub fn soft_update(target: &mut MlpNet, source: &MlpNet, tau: f64) {
    target.soft_update_from(source, tau);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, sizes: &[usize]) -> MlpNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpNet::new(sizes, Activation::Softplus, 1.0, &mut rng)
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut net = random_net(0, &[3, 4, 2]);
        let n = net.param_count();
        net.set_params(&vec![0.0; n]);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let net = random_net(1, &[3, 2]);
        let x = [0.3, -0.7, 1.1];
        let out = net.forward(&x).unwrap();
        let expected = &net.layers[0].weight * DVector::from_column_slice(&x) + &net.layers[0].bias;
        for i in 0..2 {
            assert!((out[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = random_net(2, &[3, 4, 1]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { expected: 3, actual: 1 })));
    }

    #[test]
    fn identical_seeds_identical_outputs() {
        let a = random_net(7, &[3, 8, 8, 2]);
        let b = random_net(7, &[3, 8, 8, 2]);
        assert_eq!(a.forward(&[0.1, 0.2, 0.3]).unwrap(), b.forward(&[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn gradient_is_linear_in_seed() {
        let net = random_net(3, &[2, 5, 3]);
        let x = DMatrix::from_column_slice(2, 1, &[0.4, -0.2]);
        let (_, tape) = net.forward_tape(&x).unwrap();
        let s1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 2.0]);
        let s2 = DMatrix::from_column_slice(3, 1, &[-0.5, 1.5, 0.0]);
        let (g1, i1) = net.backward(&tape, &s1);
        let (g2, i2) = net.backward(&tape, &s2);
        let (g12, i12) = net.backward(&tape, &(&s1 * 2.0 + &s2));
        let combined: Vec<f64> = g1.flatten().iter().zip(g2.flatten()).map(|(a, b)| 2.0 * a + b).collect();
        for (a, b) in combined.iter().zip(g12.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((i1 * 2.0 + i2 - i12).norm() < 1e-12);
    }

    #[test]
    fn constant_output_has_zero_gradient_wrt_input() {
        let mut net = random_net(4, &[2, 3, 1]);
        net.layers[1].weight.fill(0.0);
        let x = DMatrix::from_column_slice(2, 1, &[0.1, 0.9]);
        let (_, tape) = net.forward_tape(&x).unwrap();
        let (_, gi) = net.backward(&tape, &DMatrix::from_element(1, 1, 1.0));
        assert_eq!(gi.norm(), 0.0);
    }

    #[test]
    fn soft_update_limits() {
        let src = random_net(5, &[2, 3, 1]);
        let orig = random_net(6, &[2, 3, 1]);
        let mut t = orig.clone();
        soft_update(&mut t, &src, 0.0);
        assert_eq!(t, orig);
        soft_update(&mut t, &src, 1.0);
        assert_eq!(t.params(), src.params());
        let mut t = orig.clone();
        let gap0: f64 = t.params().iter().zip(src.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for _ in 0..20 {
            soft_update(&mut t, &src, 0.2);
        }
        let gap: f64 = t.params().iter().zip(src.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= gap0 * 0.8f64.powi(20) * (1.0 + 1e-9));
    }

    #[test]
    fn param_count_formula() {
        let net = random_net(8, &[5, 256, 256, 256, 4]);
        let sizes = [5usize, 256, 256, 256, 4];
        let formula: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(net.param_count(), formula);
        assert_eq!(formula, 134_148);
    }
}
