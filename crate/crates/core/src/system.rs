//! Discrete-time disturbed control systems.
//!
//! A [`System`] exposes a continuous vector field `ẋ = f(x, u, d)` with its
//! analytic Jacobians. The discrete map is one classical RK4 step with the
//! inputs held constant (zero-order hold); its Jacobians are obtained by
//! chain-ruling the four RK4 stages.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Largest state/input dimension handled by the stack-allocated integrator.
pub const MAX_DIM: usize = 5;

/// Axis-aligned box `{z : lo ≤ z ≤ hi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal length");
        debug_assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h));
        Self { lo, hi }
    }

    /// Symmetric box `‖z‖∞ ≤ radius` in `dim` dimensions.
    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self::new(vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn clamp(&self, z: &mut [f64]) {
        for ((zi, l), h) in z.iter_mut().zip(&self.lo).zip(&self.hi) {
            *zi = zi.clamp(*l, *h);
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .all(|((zi, l), h)| *zi >= *l && *zi <= *h)
    }

    /// Scales the box about its center by `factor`.
    pub fn inflated(&self, factor: f64) -> Self {
        let c = self.center();
        let r = self.half_widths();
        let lo = c.iter().zip(&r).map(|(c, r)| c - factor * r).collect();
        let hi = c.iter().zip(&r).map(|(c, r)| c + factor * r).collect();
        Self::new(lo, hi)
    }

    /// Maps a point of `[-1, 1]^n` affinely into the box.
    pub fn from_unit(&self, s: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            let c = 0.5 * (self.lo[i] + self.hi[i]);
            let r = 0.5 * (self.hi[i] - self.lo[i]);
            out[i] = c + r * s[i];
        }
    }
}

/// Planar pose used for footprint geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub px: f64,
    pub py: f64,
    pub psi: f64,
}

/// Jacobians of the discrete map with respect to state, control and disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJacobians {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub fd: DMatrix<f64>,
}

/// A disturbed system with a safety margin.
pub trait System: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn dt(&self) -> f64;

    /// Admissible control box 𝒰.
    fn control_set(&self) -> &BoxSet;
    /// Admissible disturbance box 𝒟.
    fn disturbance_set(&self) -> &BoxSet;
    /// Evaluation region used for sampling initial states and for grids.
    fn state_box(&self) -> &BoxSet;

    /// Continuous vector field; inputs are used as given.
    fn derivative(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]);

    /// Analytic Jacobians of [`System::derivative`].
    fn derivative_jacobians(
        &self,
        x: &[f64],
        u: &[f64],
        d: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

    /// Safety margin `g`; negative exactly on the failure set.
    fn margin(&self, x: &[f64]) -> f64;

    /// Pose of the footprint carried by the state, if any.
    fn pose(&self, x: &[f64]) -> Option<Pose>;

    /// Indices of `(px, py, psi)` inside the state vector.
    fn pose_indices(&self) -> Option<[usize; 3]> {
        None
    }

    /// Road and obstacle geometry, for systems that carry a footprint.
    fn track(&self) -> Option<&crate::vehicle::Track> {
        None
    }

    /// One discrete step with inputs clamped to 𝒰 and 𝒟.
    fn step(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        let mut uc = [0.0; MAX_DIM];
        let mut dc = [0.0; MAX_DIM];
        let (m, k) = (self.control_dim(), self.disturbance_dim());
        uc[..m].copy_from_slice(&u[..m]);
        dc[..k].copy_from_slice(&d[..k]);
        self.control_set().clamp(&mut uc[..m]);
        self.disturbance_set().clamp(&mut dc[..k]);
        self.step_raw(x, &uc[..m], &dc[..k], out);
    }

    /// One discrete step without input clamping.
    fn step_raw(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        rk4_step(self, x, u, d, self.dt(), out);
    }

    /// Jacobians of [`System::step_raw`] at `(x, u, d)`.
    fn jacobians(&self, x: &[f64], u: &[f64], d: &[f64]) -> DiscreteJacobians {
        rk4_jacobians(self, x, u, d, self.dt())
    }

    /// Convenience allocation wrapper around [`System::step`].
    fn next_state(&self, x: &[f64], u: &[f64], d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.step(x, u, d, &mut out);
        out
    }
}

/// One classical fourth-order Runge–Kutta step of `sys.derivative`.
pub fn rk4_step<S: System + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    d: &[f64],
    dt: f64,
    out: &mut [f64],
) {
    let n = sys.state_dim();
    debug_assert!(n <= MAX_DIM);
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut tmp = [0.0; MAX_DIM];

    sys.derivative(x, u, d, &mut k1[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    sys.derivative(&tmp[..n], u, d, &mut k2[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    sys.derivative(&tmp[..n], u, d, &mut k3[..n]);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    sys.derivative(&tmp[..n], u, d, &mut k4[..n]);
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Jacobians of the RK4 map, chained through the stage evaluations.
pub fn rk4_jacobians<S: System + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    d: &[f64],
    dt: f64,
) -> DiscreteJacobians {
    let n = sys.state_dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut k = [0.0; MAX_DIM];
    let mut stage_x = x.to_vec();
    let coeffs = [0.5 * dt, 0.5 * dt, dt];

    // Stage derivatives of k_i with respect to (x, u, d).
    let mut dk_dx: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut dk_du: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut dk_dd: Vec<DMatrix<f64>> = Vec::with_capacity(4);

    for stage in 0..4 {
        let (jx, ju, jd) = sys.derivative_jacobians(&stage_x, u, d);
        if stage == 0 {
            dk_dx.push(jx.clone());
            dk_du.push(ju);
            dk_dd.push(jd);
        } else {
            let c = coeffs[stage - 1];
            let prev = stage - 1;
            dk_dx.push(&jx * (&eye + &dk_dx[prev] * c));
            dk_du.push(&jx * (&dk_du[prev] * c) + ju);
            dk_dd.push(&jx * (&dk_dd[prev] * c) + jd);
        }
        if stage < 3 {
            sys.derivative(&stage_x, u, d, &mut k[..n]);
            let c = coeffs[stage];
            for i in 0..n {
                stage_x[i] = x[i] + c * k[i];
            }
        }
    }

    let w = dt / 6.0;
    let combine = |m: &[DMatrix<f64>]| (&m[0] + &m[1] * 2.0 + &m[2] * 2.0 + &m[3]) * w;
    DiscreteJacobians {
        fx: eye + combine(&dk_dx),
        fu: combine(&dk_du),
        fd: combine(&dk_dd),
    }
}

/// Central finite-difference Jacobians of `step_raw`; test and debugging aid.
pub fn finite_difference_jacobians<S: System + ?Sized>(
    sys: &S,
    x: &[f64],
    u: &[f64],
    d: &[f64],
    h: f64,
) -> DiscreteJacobians {
    let n = sys.state_dim();
    let column = |which: usize, j: usize| -> Vec<f64> {
        let mut plus = (x.to_vec(), u.to_vec(), d.to_vec());
        let mut minus = plus.clone();
        match which {
            0 => {
                plus.0[j] += h;
                minus.0[j] -= h;
            }
            1 => {
                plus.1[j] += h;
                minus.1[j] -= h;
            }
            _ => {
                plus.2[j] += h;
                minus.2[j] -= h;
            }
        }
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        sys.step_raw(&plus.0, &plus.1, &plus.2, &mut fp);
        sys.step_raw(&minus.0, &minus.1, &minus.2, &mut fm);
        fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let build = |which: usize, cols: usize| {
        let mut m = DMatrix::zeros(n, cols);
        for j in 0..cols {
            let c = column(which, j);
            for i in 0..n {
                m[(i, j)] = c[i];
            }
        }
        m
    };
    DiscreteJacobians {
        fx: build(0, n),
        fu: build(1, sys.control_dim()),
        fd: build(2, sys.disturbance_dim()),
    }
}
