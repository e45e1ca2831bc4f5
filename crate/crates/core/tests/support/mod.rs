//! Measurements shared by the unit-level integration tests and the
//! acceptance suite.

#![allow(dead_code)]

use gamesafe::grid::{linspace, ActionGrid};
use gamesafe::nn::{Activation, MlpNet, SquashedGaussianPolicy};
use gamesafe::toy::ToyGame;
use gamesafe::system::{finite_difference_jacobians, rk4_step};
use gamesafe::{BoxSet, System};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Max relative error between the analytic gradient of `loss` and central
/// differences over every parameter.
pub fn check_params(net: &MlpNet, analytic: &[f64], loss: impl Fn(&MlpNet) -> f64) -> f64 {
    let base = net.params();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += FD_STEP;
        probe.set_params(&p);
        let up = loss(&probe);
        p[i] -= 2.0 * FD_STEP;
        probe.set_params(&p);
        let down = loss(&probe);
        worst = worst.max(rel_err((up - down) / (2.0 * FD_STEP), analytic[i]));
    }
    worst
}

/// Worst relative error of parameter and input gradients over `configs`
/// random networks.
pub fn mlp_gradient_error(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=5)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=7));
        }
        let act = if rng.random_bool(0.5) { Activation::Softplus } else { Activation::Tanh };
        let net = MlpNet::new(&sizes, act, 1.0, &mut rng);
        let batch = rng.random_range(1..=4);
        let x = random_matrix(&mut rng, sizes[0], batch);
        let seed = random_matrix(&mut rng, *sizes.last().unwrap(), batch);
        let loss = |n: &MlpNet, x: &DMatrix<f64>| n.forward_batch(x).unwrap().component_mul(&seed).sum();
        let (_, tape) = net.forward_tape(&x).unwrap();
        let (g, gx) = net.backward(&tape, &seed);
        worst = worst.max(check_params(&net, &g.flatten(), |n| loss(n, &x)));
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[(r, c)] += FD_STEP;
                let mut xm = x.clone();
                xm[(r, c)] -= FD_STEP;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(fd, gx[(r, c)]));
            }
        }
    }
    worst
}

/// Worst relative error of the squashed-Gaussian policy gradient, through
/// the action squash and the log-density, over `configs` random policies.
pub fn policy_gradient_error(seed: u64, configs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let obs = rng.random_range(1..=4);
        let act = rng.random_range(1..=3);
        let width = rng.random_range(2..=8);
        let mut policy = SquashedGaussianPolicy::new(
            &BoxSet::symmetric(obs, 1.5),
            &[width, width],
            &BoxSet::new(vec![-0.5; act], vec![2.0; act]),
            &mut rng,
        );
        // Larger output weights so the tanh and log-std paths are exercised.
        let last = policy.net.layers.last_mut().unwrap();
        last.weight *= 10.0;
        let batch = rng.random_range(1..=3);
        let x = random_matrix(&mut rng, obs, batch);
        let eps = policy.noise(batch, &mut rng);
        let ga = random_matrix(&mut rng, act, batch);
        let gl: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &SquashedGaussianPolicy| {
            let s = p.forward_sample(&x, &eps).unwrap();
            s.actions.component_mul(&ga).sum() + s.log_probs.iter().zip(&gl).map(|(l, g)| l * g).sum::<f64>()
        };
        let sample = policy.forward_sample(&x, &eps).unwrap();
        let (g, _) = policy.backward(&sample, &ga, &gl);
        let base = policy.clone();
        worst = worst.max(check_params(&policy.net, &g.flatten(), |net| {
            let mut p = base.clone();
            p.net = net.clone();
            loss(&p)
        }));
    }
    worst
}

fn integrate<S: System>(sys: &S, x0: &[f64], u: &[f64], d: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    let dt = t_end / steps as f64;
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for _ in 0..steps {
        rk4_step(sys, &x, u, d, dt, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    x
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Least-squares slope of log(error) against log(step) for RK4 over
/// `t ∈ [0, 2]`, against a 20000-step reference.
pub fn convergence_order<S: System>(sys: &S, x0: &[f64], u: &[f64], d: &[f64]) -> f64 {
    let t_end = 2.0;
    let reference = integrate(sys, x0, u, d, t_end, 20_000);
    let pts: Vec<(f64, f64)> = [10usize, 20, 40, 80]
        .iter()
        .map(|&n| {
            let e = dist(&integrate(sys, x0, u, d, t_end, n), &reference);
            ((t_end / n as f64).ln(), e.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Worst entrywise gap between analytic and finite-difference Jacobians at
/// `trials` random points of the state, control and disturbance boxes.
pub fn jacobian_error<S: System>(sys: &S, rng: &mut ChaCha8Rng, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let draw = |b: &BoxSet, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..b.dim()).map(|i| rng.random_range(b.lo[i]..=b.hi[i])).collect()
        };
        let x = draw(sys.state_box(), rng);
        let u = draw(sys.control_set(), rng);
        let d = draw(sys.disturbance_set(), rng);
        let a = sys.jacobians(&x, &u, &d);
        let f = finite_difference_jacobians(sys, &x, &u, &d, 1e-6);
        for (an, fd) in [(&a.fx, &f.fx), (&a.fu, &f.fu), (&a.fd, &f.fd)] {
            worst = worst.max((an - fd).abs().max());
        }
    }
    worst
}

pub const TOY_NODES: usize = 17;

/// Toy grid with spacing 0.25 and action sets on the same lattice, so every
/// successor is a grid node and interpolation is exact.
pub fn toy_setup() -> (ToyGame, Vec<Vec<f64>>, ActionGrid) {
    let toy = ToyGame::default();
    let axes = vec![linspace(-2.0, 2.0, TOY_NODES)];
    let controls = (-4..=4).map(|k| vec![k as f64 * 0.25]).collect();
    let disturbances = (-2..=2).map(|k| vec![k as f64 * 0.25]).collect();
    (toy, axes, ActionGrid::from_points(controls, disturbances))
}

/// Fixed point of the discounted toy game on the integer lattice (spacing
/// 0.25, controls `k/4` for `|k| ≤ 4`, disturbances `k/4` for `|k| ≤ 2`),
/// iterated until the update stops changing.
pub fn toy_brute_force(gamma: f64) -> Vec<f64> {
    let n = TOY_NODES;
    let g: Vec<f64> = (0..n).map(|i| 1.0 - (-2.0 + 0.25 * i as f64).abs()).collect();
    let mut v = g.clone();
    loop {
        let mut next = vec![0.0; n];
        for i in 0..n as i64 {
            let mut best = f64::NEG_INFINITY;
            for a in -4..=4i64 {
                let mut worst = f64::INFINITY;
                for b in -2..=2i64 {
                    let j = (i + a + b).clamp(0, n as i64 - 1) as usize;
                    worst = worst.min(v[j]);
                }
                best = best.max(worst);
            }
            let gi = g[i as usize];
            next[i as usize] = (1.0 - gamma) * gi + gamma * gi.min(best);
        }
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change == 0.0 {
            return v;
        }
    }
}
