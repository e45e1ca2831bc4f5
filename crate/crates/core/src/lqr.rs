//! Nominal fallback rollouts and time-varying LQR tracking around them.

use nalgebra::DMatrix;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::players::Controller;
use crate::system::{BoxSet, DiscreteJacobians, System};
use crate::zonotope::{propagate_with, FrsTube, Zonotope, DEFAULT_MAX_GENERATORS};

/// `x̄_0..x̄_{H+1}` and `ū_0..ū_H`; step 0 carries the task proposal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NominalTrajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub t: usize,
    pub horizon: usize,
}

/// Applies `u_task` once, then the fallback for `horizon` steps, with zero
/// disturbance. Controls are stored after clamping to 𝒰.
///
/// The fallback is queried with a fixed internal stream, so it should be
/// deterministic (e.g. a policy mode).
pub fn nominal_rollout<S: System + ?Sized>(
    sys: &S,
    x: &[f64],
    u_task: &[f64],
    fallback: &dyn Controller,
    horizon: usize,
    t: usize,
) -> NominalTrajectory {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let zero = vec![0.0; sys.disturbance_dim()];
    let mut states = vec![x.to_vec()];
    let mut controls = Vec::with_capacity(horizon + 1);
    for tau in 0..=horizon {
        let xs = &states[tau];
        let mut u = if tau == 0 { u_task.to_vec() } else { fallback.control(xs, &mut rng) };
        sys.control_set().clamp(&mut u);
        let next = sys.next_state(xs, &u, &zero);
        controls.push(u);
        states.push(next);
    }
    NominalTrajectory {
        states,
        controls,
        t,
        horizon,
    }
}

/// Diagonal quadratic tracking weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingCost {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl TrackingCost {
    /// Position-heavy defaults for the five- and three-state cars; identity otherwise.
    pub fn default_for<S: System + ?Sized>(sys: &S) -> Self {
        match (sys.state_dim(), sys.control_dim()) {
            (5, 2) => Self {
                q: vec![10.0, 10.0, 1.0, 1.0, 0.1],
                r: vec![1.0, 1.0],
            },
            (3, 1) => Self {
                q: vec![10.0, 10.0, 1.0],
                r: vec![1.0],
            },
            (n, m) => Self {
                q: vec![1.0; n],
                r: vec![1.0; m],
            },
        }
    }
}

/// How the Taylor remainder boxes are sampled and inflated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemainderOptions {
    /// Sample levels per axis on `[-1, 1]` (3 gives corners and midpoints).
    pub levels: usize,
    pub multiplier: f64,
    pub inflation: f64,
    /// Absolute floor added to every half-width.
    pub floor: f64,
}

impl Default for RemainderOptions {
    fn default() -> Self {
        Self {
            levels: 3,
            multiplier: 2.0,
            inflation: 1.05,
            floor: 1e-9,
        }
    }
}

/// Everything that shapes a tracking plan and its tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingOptions {
    /// `None` selects [`TrackingCost::default_for`].
    pub cost: Option<TrackingCost>,
    pub remainder: RemainderOptions,
    pub disturbance_inflation: f64,
    pub max_generators: usize,
}

impl Default for TrackingOptions {
    fn default() -> Self {
        Self {
            cost: None,
            remainder: RemainderOptions::default(),
            disturbance_inflation: 1.05,
            max_generators: DEFAULT_MAX_GENERATORS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingPlan {
    /// `K_0..K_H`; `K_0 = 0` since step 0 applies the task control.
    pub gains: Vec<DMatrix<f64>>,
    pub jacobians: Vec<DiscreteJacobians>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// Half-widths of `ℰ_0..ℰ_H`.
    pub remainders: Vec<Vec<f64>>,
    pub gain_scale: f64,
}

/// Jacobians of the discrete map along the nominal trajectory, `τ = 0..=H`.
pub fn linearize<S: System + ?Sized>(sys: &S, traj: &NominalTrajectory) -> Vec<DiscreteJacobians> {
    let zero = vec![0.0; sys.disturbance_dim()];
    (0..=traj.horizon)
        .map(|tau| sys.jacobians(&traj.states[tau], &traj.controls[tau], &zero))
        .collect()
}

/// Backward Riccati recursion for `δx' = A_τ δx + B_τ δu` over
/// `τ = 0..A.len()`, terminal weight `Q`. Returns gains with `δu = K δx`
/// and the value matrices `P_0..P_N`.
pub fn riccati_gains(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let steps = a.len();
    let mut p = q.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); steps];
    let mut values = vec![DMatrix::zeros(0, 0); steps + 1];
    values[steps] = p.clone();
    for tau in (0..steps).rev() {
        let (at, bt) = (&a[tau], &b[tau]);
        let s = r + bt.transpose() * &p * bt;
        let s = 0.5 * (&s + s.transpose());
        let chol = s.cholesky().ok_or(Error::IllConditioned { step: tau })?;
        let k = -chol.solve(&(bt.transpose() * &p * at));
        let acl = at + bt * &k;
        let next = q + k.transpose() * r * &k + acl.transpose() * &p * &acl;
        p = 0.5 * (&next + next.transpose());
        gains[tau] = k;
        values[tau] = p.clone();
    }
    Ok((gains, values))
}

/// Tracking gains `K_1..K_H` (with `K_0 = 0`) from the linearized pairs.
pub fn tvlqr(jacobians: &[DiscreteJacobians], cost: &TrackingCost) -> Result<Vec<DMatrix<f64>>> {
    if cost.q.iter().any(|v| *v < 0.0) {
        return Err(Error::Config("tracking Q must be positive semidefinite".into()));
    }
    if cost.r.iter().any(|v| *v <= 0.0) {
        return Err(Error::Config("tracking R must be positive definite".into()));
    }
    let q = DMatrix::from_diagonal(&cost.q.clone().into());
    let r = DMatrix::from_diagonal(&cost.r.clone().into());
    let a: Vec<_> = jacobians[1..].iter().map(|j| j.fx.clone()).collect();
    let b: Vec<_> = jacobians[1..].iter().map(|j| j.fu.clone()).collect();
    let (gains, _) = riccati_gains(&a, &b, &q, &r).map_err(|e| match e {
        Error::IllConditioned { step } => Error::IllConditioned { step: step + 1 },
        other => other,
    })?;
    let (n, m) = (jacobians[0].fx.nrows(), jacobians[0].fu.ncols());
    let mut all = vec![DMatrix::zeros(m, n)];
    all.extend(gains);
    Ok(all)
}

/// `A_τ = f_x + f_u K_τ` and `B_τ = f_d`.
pub fn closed_loop_matrices(
    jacobians: &[DiscreteJacobians],
    gains: &[DMatrix<f64>],
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    jacobians
        .iter()
        .zip(gains)
        .map(|(j, k)| (&j.fx + &j.fu * k, j.fd.clone()))
        .unzip()
}

fn levels(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Visits every point of the tensor grid `levels^dim`.
fn for_each_grid_point(dim: usize, lv: &[f64], mut f: impl FnMut(&[f64])) {
    let mut idx = vec![0usize; dim];
    let mut s = vec![0.0; dim];
    loop {
        for i in 0..dim {
            s[i] = lv[idx[i]];
        }
        f(&s);
        let mut i = 0;
        while i < dim {
            idx[i] += 1;
            if idx[i] < lv.len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == dim {
            return;
        }
    }
}

/// Bound on `|step(x̄+δx, ū+Kδx, d) − x̄' − A δx − B d|` over the error box
/// and 𝒟, sampled on a grid, scaled by the multiplier and the inflation.
#[allow(clippy::too_many_arguments)]
pub fn remainder_bound<S: System + ?Sized>(
    sys: &S,
    x_bar: &[f64],
    u_bar: &[f64],
    x_bar_next: &[f64],
    gain: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    error_box: Option<&BoxSet>,
    d_box: &BoxSet,
    opts: &RemainderOptions,
) -> Vec<f64> {
    let (n, m, k) = (sys.state_dim(), sys.control_dim(), sys.disturbance_dim());
    let lv = levels(opts.levels);
    let (ec, er) = match error_box {
        Some(bx) => (bx.center(), bx.half_widths()),
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let (dc, dr) = (d_box.center(), d_box.half_widths());
    let mut dx = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut d = vec![0.0; k];
    let mut out = vec![0.0; n];
    let mut worst = vec![0.0_f64; n];
    let err_dim = if error_box.is_some() { n } else { 0 };
    for_each_grid_point(err_dim, &lv, |se| {
        for i in 0..n {
            dx[i] = if err_dim == 0 { 0.0 } else { ec[i] + er[i] * se[i] };
            x[i] = x_bar[i] + dx[i];
        }
        for i in 0..m {
            u[i] = u_bar[i] + (0..n).map(|j| gain[(i, j)] * dx[j]).sum::<f64>();
        }
        for_each_grid_point(k, &lv, |sd| {
            for i in 0..k {
                d[i] = dc[i] + dr[i] * sd[i];
            }
            sys.step_raw(&x, &u, &d, &mut out);
            for i in 0..n {
                let lin: f64 = (0..n).map(|j| a[(i, j)] * dx[j]).sum::<f64>()
                    + (0..k).map(|j| b[(i, j)] * d[j]).sum::<f64>();
                let r = (out[i] - x_bar_next[i] - lin).abs();
                worst[i] = worst[i].max(r);
            }
        });
    });
    worst
        .iter()
        .map(|w| w * opts.multiplier * opts.inflation + opts.floor)
        .collect()
}

/// Gains, closed-loop matrices, remainders and the error tube of one
/// nominal trajectory, with all gains scaled by `gain_scale`.
pub fn build_plan<S: System + ?Sized>(
    sys: &S,
    traj: &NominalTrajectory,
    opts: &TrackingOptions,
    gain_scale: f64,
) -> Result<(TrackingPlan, FrsTube)> {
    let jacobians = linearize(sys, traj);
    let cost = opts.cost.clone().unwrap_or_else(|| TrackingCost::default_for(sys));
    let gains: Vec<DMatrix<f64>> = tvlqr(&jacobians, &cost)?.into_iter().map(|k| k * gain_scale).collect();
    Ok(plan_with_gains(sys, traj, opts, jacobians, gains, gain_scale))
}

/// Like [`build_plan`] with explicitly given gains.
pub fn plan_with_gains<S: System + ?Sized>(
    sys: &S,
    traj: &NominalTrajectory,
    opts: &TrackingOptions,
    jacobians: Vec<DiscreteJacobians>,
    gains: Vec<DMatrix<f64>>,
    gain_scale: f64,
) -> (TrackingPlan, FrsTube) {
    let (a, b) = closed_loop_matrices(&jacobians, &gains);
    let d_box = sys.disturbance_set().inflated(opts.disturbance_inflation);
    let mut remainders = Vec::with_capacity(traj.horizon + 1);
    let tube = propagate_with(&a, &b, &d_box, opts.max_generators, |tau, r: Option<&Zonotope>| {
        let hull = r.map(Zonotope::interval_hull);
        let e = remainder_bound(
            sys,
            &traj.states[tau],
            &traj.controls[tau],
            &traj.states[tau + 1],
            &gains[tau],
            &a[tau],
            &b[tau],
            hull.as_ref(),
            sys.disturbance_set(),
            &opts.remainder,
        );
        remainders.push(e.clone());
        e
    });
    let plan = TrackingPlan {
        gains,
        jacobians,
        a,
        b,
        remainders,
        gain_scale,
    };
    (plan, tube)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::players::ConstantController;
    use crate::vehicle::{Car, EnvSpec};

    fn empty_car() -> Car {
        Car::new(EnvSpec {
            obstacles: vec![],
            ..Default::default()
        })
    }

    #[test]
    fn rollout_counts_and_straight_line() {
        let car = empty_car();
        let zero = ConstantController(vec![0.0, 0.0]);
        let x0 = [0.0, 0.0, 1.0, 0.0, 0.0];
        let tr = nominal_rollout(&car, &x0, &[0.0, 0.0], &zero, 1, 0);
        assert_eq!((tr.states.len(), tr.controls.len()), (3, 2));
        let tr = nominal_rollout(&car, &x0, &[0.0, 0.0], &zero, 10, 0);
        for (i, s) in tr.states.iter().enumerate() {
            assert!((s[0] - 0.1 * i as f64).abs() < 1e-12);
            assert_eq!(&s[1..], &[0.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn scalar_riccati_by_hand() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let (k, _) = riccati_gains(std::slice::from_ref(&one), std::slice::from_ref(&one), &one, &one).unwrap();
        assert!((k[0][(0, 0)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn stationary_gain_fixed_point() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let (k, _) = riccati_gains(&vec![a.clone(); 800], &vec![b.clone(); 800], &q, &r).unwrap();
        // Oracle: plain value iteration on the algebraic Riccati equation.
        let mut p = q.clone();
        for _ in 0..5000 {
            let s = &r + b.transpose() * &p * &b;
            let inv = s.try_inverse().unwrap();
            p = &q + a.transpose() * &p * &a
                - a.transpose() * &p * &b * inv * b.transpose() * &p * &a;
        }
        let s = &r + b.transpose() * &p * &b;
        let k_inf = -s.try_inverse().unwrap() * b.transpose() * &p * &a;
        assert!((&k[0] - k_inf).abs().max() < 1e-9);
    }

    #[test]
    fn zero_state_cost_gives_zero_gain() {
        let car = empty_car();
        let tr = nominal_rollout(&car, &[0.0, 0.0, 1.0, 0.0, 0.0], &[0.0, 0.0], &ConstantController(vec![0.0, 0.0]), 5, 0);
        let cost = TrackingCost {
            q: vec![0.0; 5],
            r: vec![1.0; 2],
        };
        let k = tvlqr(&linearize(&car, &tr), &cost).unwrap();
        assert!(k.iter().all(|k| k.abs().max() == 0.0));
        let (a, b) = closed_loop_matrices(&linearize(&car, &tr), &k);
        assert_eq!(a[3], linearize(&car, &tr)[3].fx);
        assert_eq!((b[0].nrows(), b[0].ncols()), (5, 5));
    }

    #[test]
    fn singular_control_weight_is_reported() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        let err = riccati_gains(std::slice::from_ref(&one), std::slice::from_ref(&zero), &one, &zero).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { step: 0 }));
    }
}
