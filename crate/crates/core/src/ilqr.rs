//! Iterative LQR and the receding-horizon task policy built on it.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::players::Controller;
use crate::system::System;

/// Second-order expansion of a stage cost.
#[derive(Debug, Clone)]
pub struct CostExpansion {
    pub l: f64,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

/// A finite-horizon optimal control problem with smooth dynamics.
pub trait IlqrProblem {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn jacobians(&self, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);
    fn stage_cost(&self, x: &[f64], u: &[f64]) -> CostExpansion;
    /// Terminal cost with gradient and Hessian.
    fn terminal_cost(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>);
    fn project_control(&self, _u: &mut [f64]) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlqrOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub tolerance: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_factor: f64,
    pub line_search: Vec<f64>,
}

impl Default for IlqrOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-9,
            reg_init: 0.0,
            reg_min: 1e-8,
            reg_max: 1e10,
            reg_factor: 10.0,
            line_search: vec![1.0, 0.5, 0.25, 0.1, 0.03, 0.01],
        }
    }
}

#[derive(Debug, Clone)]
pub struct IlqrSolution {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub cost: f64,
    /// Cost of the initial guess followed by every accepted iterate.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn rollout<P: IlqrProblem + ?Sized>(p: &P, x0: &[f64], controls: &mut [Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut xs = vec![x0.to_vec()];
    let mut cost = 0.0;
    for u in controls.iter_mut() {
        p.project_control(u);
        let x = xs.last().unwrap();
        cost += p.stage_cost(x, u).l;
        let next = p.step(x, u);
        xs.push(next);
    }
    cost += p.terminal_cost(xs.last().unwrap()).0;
    (xs, cost)
}

type Feedback = (Vec<DVector<f64>>, Vec<DMatrix<f64>>);

fn backward_pass<P: IlqrProblem + ?Sized>(
    p: &P,
    xs: &[Vec<f64>],
    us: &[Vec<f64>],
    reg: f64,
) -> Option<Feedback> {
    let horizon = us.len();
    let m = p.control_dim();
    let (_, mut vx, mut vxx) = p.terminal_cost(&xs[horizon]);
    let mut ks = vec![DVector::zeros(m); horizon];
    let mut kk = vec![DMatrix::zeros(m, p.state_dim()); horizon];
    for t in (0..horizon).rev() {
        let (a, b) = p.jacobians(&xs[t], &us[t]);
        let c = p.stage_cost(&xs[t], &us[t]);
        let qx = &c.lx + a.transpose() * &vx;
        let qu = &c.lu + b.transpose() * &vx;
        let qxx = &c.lxx + a.transpose() * &vxx * &a;
        let quu = &c.luu + b.transpose() * &vxx * &b;
        let qux = &c.lux + b.transpose() * &vxx * &a;
        let quu_reg = &quu + DMatrix::identity(m, m) * reg;
        let quu_reg = 0.5 * (&quu_reg + quu_reg.transpose());
        let chol = quu_reg.cholesky()?;
        let k = -chol.solve(&qu);
        let big_k = -chol.solve(&qux);
        vx = &qx + big_k.transpose() * &quu * &k + big_k.transpose() * &qu + qux.transpose() * &k;
        let v = &qxx + big_k.transpose() * &quu * &big_k + big_k.transpose() * &qux + qux.transpose() * &big_k;
        vxx = 0.5 * (&v + v.transpose());
        ks[t] = k;
        kk[t] = big_k;
    }
    Some((ks, kk))
}

/// Iterative LQR with backtracking line search and Levenberg-style
/// regularization of `Q_uu`.
pub fn ilqr_solve<P: IlqrProblem + ?Sized>(p: &P, x0: &[f64], init: Vec<Vec<f64>>, opts: &IlqrOptions) -> IlqrSolution {
    let mut us = init;
    let (mut xs, mut cost) = rollout(p, x0, &mut us);
    let mut history = vec![cost];
    let mut reg = opts.reg_init;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations && cost.is_finite() {
        iterations += 1;
        let Some((ks, kk)) = backward_pass(p, &xs, &us, reg) else {
            reg = (reg * opts.reg_factor).max(opts.reg_min);
            if reg > opts.reg_max {
                break;
            }
            continue;
        };
        let mut accepted = false;
        for &alpha in &opts.line_search {
            let mut cand = Vec::with_capacity(us.len());
            let mut x = x0.to_vec();
            for t in 0..us.len() {
                let dx = DVector::from_iterator(x.len(), x.iter().zip(&xs[t]).map(|(a, b)| a - b));
                let du = alpha * &ks[t] + &kk[t] * dx;
                let mut u: Vec<f64> = us[t].iter().zip(du.iter()).map(|(u, d)| u + d).collect();
                p.project_control(&mut u);
                x = p.step(&x, &u);
                cand.push(u);
            }
            let (cxs, ccost) = rollout(p, x0, &mut cand);
            if ccost < cost {
                let rel = (cost - ccost) / cost.abs().max(1e-12);
                us = cand;
                xs = cxs;
                cost = ccost;
                history.push(cost);
                accepted = true;
                if rel < opts.tolerance {
                    converged = true;
                }
                break;
            }
        }
        if converged {
            break;
        }
        if accepted {
            reg = if reg <= opts.reg_min { opts.reg_init } else { reg / opts.reg_factor };
        } else {
            // No decrease at any step size: either at a stationary point
            // or the model is poor; regularize and retry.
            if reg >= opts.reg_max {
                converged = true;
                break;
            }
            reg = (reg * opts.reg_factor).max(opts.reg_min);
        }
    }
    IlqrSolution {
        states: xs,
        controls: us,
        cost,
        cost_history: history,
        iterations,
        converged,
    }
}

/// Weights of the lane-keeping task cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskCost {
    pub horizon: usize,
    pub reference_speed: f64,
    pub w_speed: f64,
    pub w_lateral: f64,
    pub w_heading: f64,
    /// Per-control quadratic weights (broadcast if shorter).
    pub w_control: Vec<f64>,
    pub barrier_weight: f64,
    /// Below this constraint value the log barrier continues quadratically.
    pub barrier_delta: f64,
    pub iterations: usize,
}

impl Default for TaskCost {
    fn default() -> Self {
        Self {
            horizon: 20,
            reference_speed: 1.0,
            w_speed: 1.0,
            w_lateral: 1.0,
            w_heading: 0.5,
            w_control: vec![0.1],
            barrier_weight: 0.02,
            barrier_delta: 0.05,
            iterations: 10,
        }
    }
}

/// Relaxed log barrier `−μ ln h` with its first two derivatives.
pub fn relaxed_barrier(h: f64, mu: f64, delta: f64) -> (f64, f64, f64) {
    if h > delta {
        (-mu * h.ln(), -mu / h, mu / (h * h))
    } else {
        let z = (h - 2.0 * delta) / delta;
        (
            mu * (0.5 * (z * z - 1.0) - delta.ln()),
            mu * z / delta,
            mu / (delta * delta),
        )
    }
}

/// Task cost of a car-like system: speed tracking (when the state carries
/// a speed), lane centering, heading alignment, control effort, and barrier
/// terms on the road edges and elliptical obstacle envelopes.
pub struct CarTask<'a, S: System + ?Sized> {
    pub sys: &'a S,
    pub cost: &'a TaskCost,
    /// Index of the speed in the state, if any.
    pub speed_index: Option<usize>,
}

impl<'a, S: System + ?Sized> CarTask<'a, S> {
    pub fn new(sys: &'a S, cost: &'a TaskCost) -> Self {
        let speed_index = if sys.state_dim() == 5 { Some(2) } else { None };
        Self { sys, cost, speed_index }
    }

    fn w_control(&self, i: usize) -> f64 {
        let w = &self.cost.w_control;
        w[i.min(w.len() - 1)]
    }

    /// Constraint values with gradients in `(px, py, psi)`.
    fn constraints(&self, x: &[f64]) -> Vec<(f64, [f64; 3])> {
        let track = self.sys.track().expect("task cost needs a track");
        let pi = self.sys.pose_indices().expect("task cost needs a pose");
        let (px, py, psi) = (x[pi[0]], x[pi[1]], x[pi[2]]);
        let fp = track.footprint;
        let [cx, cy] = fp.center();
        let [hx, hy] = fp.half_extents();
        let (s, c) = psi.sin_cos();
        let wx = px + c * cx - s * cy;
        let wy = py + s * cx + c * cy;
        let dwx_dpsi = -s * cx - c * cy;
        let dwy_dpsi = c * cx - s * cy;
        let edge = track.road_half_width - hy;
        let mut out = vec![
            (edge - wy, [0.0, -1.0, -dwy_dpsi]),
            (edge + wy, [0.0, 1.0, dwy_dpsi]),
        ];
        for o in &track.obstacles {
            let [ox, oy] = o.center();
            let [ax, ay] = o.half_extents();
            let (a, b) = (ax + hx, ay + hy);
            let (ex, ey) = ((wx - ox) / a, (wy - oy) / b);
            let h = ex * ex + ey * ey - 1.0;
            let gx = 2.0 * ex / a;
            let gy = 2.0 * ey / b;
            out.push((h, [gx, gy, gx * dwx_dpsi + gy * dwy_dpsi]));
        }
        out
    }

    fn state_terms(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let pi = self.sys.pose_indices().expect("task cost needs a pose");
        let mut l = 0.0;
        let mut lx = DVector::zeros(n);
        let mut lxx = DMatrix::zeros(n, n);
        let mut quad = |i: usize, w: f64, e: f64| {
            l += 0.5 * w * e * e;
            lx[i] += w * e;
            lxx[(i, i)] += w;
        };
        quad(pi[1], self.cost.w_lateral, x[pi[1]]);
        quad(pi[2], self.cost.w_heading, x[pi[2]]);
        if let Some(v) = self.speed_index {
            quad(v, self.cost.w_speed, x[v] - self.cost.reference_speed);
        }
        for (h, g) in self.constraints(x) {
            let (b, db, d2b) = relaxed_barrier(h, self.cost.barrier_weight, self.cost.barrier_delta);
            l += b;
            for a in 0..3 {
                lx[pi[a]] += db * g[a];
                for c in 0..3 {
                    lxx[(pi[a], pi[c])] += d2b * g[a] * g[c];
                }
            }
        }
        (l, lx, lxx)
    }
}

impl<S: System + ?Sized> IlqrProblem for CarTask<'_, S> {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.sys.control_dim()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.sys.next_state(x, u, &vec![0.0; self.sys.disturbance_dim()])
    }
    fn jacobians(&self, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let j = self.sys.jacobians(x, u, &vec![0.0; self.sys.disturbance_dim()]);
        (j.fx, j.fu)
    }
    fn stage_cost(&self, x: &[f64], u: &[f64]) -> CostExpansion {
        let (mut l, lx, lxx) = self.state_terms(x);
        let m = u.len();
        let mut lu = DVector::zeros(m);
        let mut luu = DMatrix::zeros(m, m);
        for i in 0..m {
            let w = self.w_control(i);
            l += 0.5 * w * u[i] * u[i];
            lu[i] = w * u[i];
            luu[(i, i)] = w;
        }
        CostExpansion {
            l,
            lx,
            lu,
            lxx,
            luu,
            lux: DMatrix::zeros(m, x.len()),
        }
    }
    fn terminal_cost(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        self.state_terms(x)
    }
    fn project_control(&self, u: &mut [f64]) {
        self.sys.control_set().clamp(u);
    }
}

/// Receding-horizon iLQR controller, warm-started from its previous
/// solution shifted by one step. Use one instance per trajectory.
pub struct IlqrPolicy<'a, S: System + ?Sized> {
    pub sys: &'a S,
    pub cost: TaskCost,
    previous: Mutex<Option<Vec<Vec<f64>>>>,
}

impl<'a, S: System + ?Sized> IlqrPolicy<'a, S> {
    pub fn new(sys: &'a S, cost: TaskCost) -> Self {
        Self {
            sys,
            cost,
            previous: Mutex::new(None),
        }
    }

    pub fn reset(&self) {
        *self.previous.lock().expect("iLQR warm start lock") = None;
    }

    pub fn plan(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut prev = self.previous.lock().expect("iLQR warm start lock");
        let m = self.sys.control_dim();
        let shifted = match prev.as_ref() {
            Some(p) => {
                let mut s: Vec<Vec<f64>> = p[1..].to_vec();
                s.push(p.last().cloned().unwrap_or_else(|| vec![0.0; m]));
                s
            }
            None => vec![vec![0.0; m]; self.cost.horizon],
        };
        let problem = CarTask::new(self.sys, &self.cost);
        let opts = IlqrOptions {
            max_iterations: self.cost.iterations,
            ..Default::default()
        };
        let sol = ilqr_solve(&problem, x, shifted.clone(), &opts);
        let controls = if sol.cost.is_finite() { sol.controls } else { shifted };
        *prev = Some(controls.clone());
        controls
    }
}

impl<S: System + ?Sized> Controller for IlqrPolicy<'_, S> {
    fn control(&self, x: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        self.plan(x)[0].clone()
    }
}
