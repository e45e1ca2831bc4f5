//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line to stderr (uncaptured) before asserting.
//!
//! The oracle grid and the trained policies are cached under the cargo
//! target tmpdir and shared between criteria; the first run trains every
//! method for three seeds.

mod support;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gamesafe::config::{ExperimentConfig, GridConfig};
use gamesafe::experiment::{emit_metrics, median, MetricsRow};
use gamesafe::filter::robust_check;
use gamesafe::grid::{solve, GridValueFunction, SolveOptions, SweepOrder};
use gamesafe::nn::io;
use gamesafe::pipeline::{self, ALL_METHODS};
use gamesafe::players::{stream_rng, uniform_in, Disturber, LaneKeeper, OracleController, OracleDisturbance};
use gamesafe::train::{run_episode, Method, TrainConfig};
use gamesafe::vehicle::sample_initial_state;
use gamesafe::zonotope::occupied_region;
use gamesafe::{Car, EnvSpec, ReducedCar, System};
use rand::Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {id} ({name}): {verdict} | {detail} | {:.1}s",
        started.elapsed().as_secs_f64()
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache")
}

/// Default experiment settings with the sweep restricted to the largest
/// (training) bound.
fn config() -> &'static ExperimentConfig {
    static CFG: OnceLock<ExperimentConfig> = OnceLock::new();
    CFG.get_or_init(|| {
        let mut cfg = ExperimentConfig {
            cache_dir: cache_dir(),
            ..Default::default()
        };
        cfg.experiments.d_max_list = vec![cfg.env.d_max];
        cfg.experiments.n_rollouts = 400;
        cfg
    })
}

fn grid() -> &'static GridValueFunction {
    static GRID: OnceLock<GridValueFunction> = OnceLock::new();
    GRID.get_or_init(|| pipeline::training_grid(config()).expect("oracle grid"))
}

/// Trains (or loads) every method for every seed once per process so that
/// concurrently running criteria do not train the same run twice. Returns
/// the wall time spent training (near zero when every run was cached).
fn ensure_trained() -> Duration {
    static SPENT: OnceLock<Duration> = OnceLock::new();
    *SPENT.get_or_init(|| {
        let started = Instant::now();
        pipeline::trained_all(config(), &ALL_METHODS).expect("training");
        started.elapsed()
    })
}

fn row<'a>(rows: &'a [MetricsRow], label: &str) -> &'a MetricsRow {
    rows.iter().find(|r| r.label == label).unwrap_or_else(|| panic!("missing row {label}"))
}

#[test]
fn criterion_1_numerics() {
    let started = Instant::now();
    let mlp = support::mlp_gradient_error(101, 100);
    let policy = support::policy_gradient_error(102, 100);
    let car = Car::new(EnvSpec::default());
    let reduced = ReducedCar::new(EnvSpec::default());
    let p_car = support::convergence_order(&car, &[0.0, 0.1, 1.0, 0.3, 0.1], &[0.8, 0.5], &[0.02, -0.03, 0.0, 0.05, 0.0]);
    let p_red = support::convergence_order(&reduced, &[0.0, 0.0, 0.4], &[0.6], &[0.05, 0.0, -0.02]);
    let mut rng = stream_rng(103, 0, 0);
    let jac = support::jacobian_error(&car, &mut rng, 200).max(support::jacobian_error(&reduced, &mut rng, 200));
    let order_ok = |p: f64| (3.5..=4.5).contains(&p);
    let pass = mlp < 1e-5 && policy < 1e-5 && order_ok(p_car) && order_ok(p_red) && jac < 1e-4
        && started.elapsed().as_secs() < 60;
    report(
        1,
        "numerics",
        pass,
        &format!("mlp grad {mlp:.2e}, policy grad {policy:.2e}, rk4 order {p_car:.3}/{p_red:.3}, jacobian {jac:.2e}"),
        started,
    );
}

#[test]
fn criterion_2_oracle() {
    let started = Instant::now();
    let (toy, axes, actions) = support::toy_setup();
    let gamma = 0.9;
    let expected = support::toy_brute_force(gamma);
    let mut toy_err: f64 = 0.0;
    let mut contraction_ok = true;
    for order in [SweepOrder::GaussSeidel, SweepOrder::Jacobi] {
        let opts = SolveOptions {
            gamma,
            tol: 1e-13,
            order,
            ..Default::default()
        };
        let report = solve(&toy, axes.clone(), &actions, &opts).unwrap();
        for (a, b) in report.value.values.iter().zip(&expected) {
            toy_err = toy_err.max((a - b).abs());
        }
        if order == SweepOrder::Jacobi {
            contraction_ok = report.residuals.windows(2).all(|w| w[1] <= gamma * w[0] + 1e-15);
        }
    }

    let cfg = config();
    let car = ReducedCar::new(pipeline::training_env(cfg));
    let grid = grid();
    let acts = cfg.grid.actions(&car);
    let ctrl = OracleController {
        value: grid,
        sys: &car,
        actions: &acts,
    };
    let dist = OracleDisturbance {
        value: grid,
        sys: &car,
        actions: &acts,
    };
    let margin = grid.lipschitz_margin(&[1.0, 1.0, 0.5]);
    let epsilon = margin;
    let mut rng = stream_rng(2, 0, 0);
    let mut starts = Vec::new();
    while starts.len() < 500 {
        let x = sample_initial_state(&car, &mut rng).unwrap();
        if grid.interpolate(&x) >= epsilon {
            starts.push(x);
        }
    }
    let failures = starts
        .iter()
        .filter(|x| !run_episode(&car, x, &ctrl, &dist, 200, &mut rng, None).safe)
        .count();
    let unsafe_nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.values[i] < -margin && car.margin(&grid.node(i)) >= 0.0)
        .collect();
    let picks: Vec<usize> = (0..100).map(|_| unsafe_nodes[rng.random_range(0..unsafe_nodes.len())]).collect();
    let defeated = picks
        .iter()
        .filter(|&&i| !run_episode(&car, &grid.node(i), &ctrl, &dist, 200, &mut rng, None).safe)
        .count();
    let pass = toy_err <= 1e-9 && contraction_ok && failures == 0 && defeated >= 95 && started.elapsed().as_secs() < 900;
    report(
        2,
        "oracle",
        pass,
        &format!(
            "toy error {toy_err:.1e}, contraction {contraction_ok}, failures from V>=eps {failures}/500 (eps {epsilon:.4}), defeated from V<-margin {defeated}/100"
        ),
        started,
    );
}

/// Disturbance source of one simulated sequence.
#[derive(Clone, Copy)]
enum Attack {
    Uniform,
    Corner,
    Oracle,
}

#[test]
fn criterion_3_frs_soundness() {
    let started = Instant::now();
    let cfg = config();
    let car = ReducedCar::new(pipeline::training_env(cfg));
    let grid = grid();
    let acts = cfg.grid.actions(&car);
    let oracle = OracleDisturbance {
        value: grid,
        sys: &car,
        actions: &acts,
    };
    let fallback = LaneKeeper {
        sys: &car,
        k_py: 2.0,
        k_psi: 2.0,
    };
    let horizon = cfg.filters.horizon;
    let opts = gamesafe::filter::RobustOptions {
        tracking: cfg.filters.tracking.clone(),
        skip_tube: false,
    };
    let mut rng = stream_rng(3, 0, 0);
    let mut plans = Vec::new();
    let mut tried = 0;
    while plans.len() < 50 {
        tried += 1;
        assert!(tried < 100_000, "too few certifiable states");
        let x = sample_initial_state(&car, &mut rng).unwrap();
        let u = uniform_in(car.control_set(), &mut rng);
        if let (_, Some(plan)) = robust_check(&car, &x, &u, &fallback, horizon, 0, &opts) {
            plans.push((x, plan));
        }
    }
    let track = car.track().unwrap();
    let d_box = car.disturbance_set().clone();
    let u_box = car.control_set();
    let sequences = 10_000;
    let lp_checked = 10;
    let results: Vec<(usize, usize, usize)> = {
        use rayon::prelude::*;
        plans
            .par_iter()
            .enumerate()
            .map(|(p, (x0, plan))| {
                let regions: Vec<_> = (0..=horizon + 1)
                    .map(|tau| {
                        let s = &plan.trajectory.states[tau];
                        occupied_region([s[0], s[1], s[2]], plan.tube.at(tau), [0, 1, 2], &track.footprint)
                    })
                    .collect();
                let mut rng = stream_rng(3, 1, p as u64);
                let (mut escapes, mut failures, mut bad_controls) = (0, 0, 0);
                for k in 0..sequences {
                    let attack = match k % 10 {
                        0 => Attack::Oracle,
                        1..=5 => Attack::Uniform,
                        _ => Attack::Corner,
                    };
                    let mut x = x0.clone();
                    for tau in 0..=horizon {
                        let u = plan.tracking_control(tau, &x);
                        if !(0..u.len()).all(|i| u[i] >= u_box.lo[i] - 1e-12 && u[i] <= u_box.hi[i] + 1e-12) {
                            bad_controls += 1;
                        }
                        let d = match attack {
                            Attack::Uniform => uniform_in(&d_box, &mut rng),
                            Attack::Corner => (0..d_box.dim())
                                .map(|i| if rng.random_bool(0.5) { d_box.lo[i] } else { d_box.hi[i] })
                                .collect(),
                            Attack::Oracle => oracle.disturbance(&x, &u, &mut rng),
                        };
                        x = car.next_state(&x, &u, &d);
                        let nominal = &plan.trajectory.states[tau + 1];
                        let err: Vec<f64> = x.iter().zip(nominal).map(|(a, b)| a - b).collect();
                        let tube = plan.tube.at(tau + 1).expect("tube step");
                        let in_hull = tube.interval_hull().contains(&err);
                        let in_tube = in_hull && (k >= lp_checked || tube.contains(&err));
                        let region = &regions[tau + 1];
                        let covered = x[2] >= region.psi_lo - 1e-12
                            && x[2] <= region.psi_hi + 1e-12
                            && footprint_inside(&x, &track.footprint, &region.polygon);
                        if !in_tube || !covered {
                            escapes += 1;
                        }
                        if car.margin(&x) < 0.0 {
                            failures += 1;
                        }
                    }
                }
                (escapes, failures, bad_controls)
            })
            .collect()
    };
    let escapes: usize = results.iter().map(|r| r.0).sum();
    let failures: usize = results.iter().map(|r| r.1).sum();
    let bad_controls: usize = results.iter().map(|r| r.2).sum();
    let pass = escapes == 0 && failures == 0 && bad_controls == 0 && started.elapsed().as_secs() < 1200;
    report(
        3,
        "frs soundness",
        pass,
        &format!(
            "{} plans x {sequences} sequences ({tried} states tried): {escapes} containment escapes, {failures} entries into the failure set, {bad_controls} controls outside U",
            plans.len()
        ),
        started,
    );
}

/// All footprint corners at pose `x` lie in the counter-clockwise convex
/// polygon `poly`.
fn footprint_inside(x: &[f64], footprint: &gamesafe::geometry::Rect, poly: &[gamesafe::geometry::Point]) -> bool {
    let (s, c) = x[2].sin_cos();
    footprint.corners().iter().all(|q| {
        let p = [x[0] + c * q[0] - s * q[1], x[1] + s * q[0] + c * q[1]];
        let n = poly.len();
        (0..n).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            cross >= -1e-9
        })
    })
}

#[test]
fn criterion_4_filter_end_to_end() {
    ensure_trained();
    let started = Instant::now();
    let res = match pipeline::filter_eval(config()) {
        Ok(r) => r,
        Err(e) => {
            report(4, "filter end to end", false, &format!("evaluation failed: {e}"), started);
            return;
        }
    };
    let violations: usize = res.monitor.iter().map(|(_, v)| v.violations.len()).sum();
    let robust = row(&res.rows, "robust");
    let rollout = row(&res.rows, "rollout");
    let value = row(&res.rows, "value");
    let unfiltered = row(&res.rows, "unfiltered");
    let (sr, sd, sv) = (robust.median_safe_rate(), rollout.median_safe_rate(), value.median_safe_rate());
    let (fr, fd) = (robust.median_filter_frequency(), rollout.median_filter_frequency());
    let pass = violations == 0 && sr == 1.0 && sr >= sd && sd >= sv && fr >= fd && started.elapsed().as_secs() < 1800;
    report(
        4,
        "filter end to end",
        pass,
        &format!(
            "monitor violations {violations} over {} traces; median safe rate robust {sr:.3} rollout {sd:.3} critic-sign {sv:.3} unfiltered {:.3}; filter frequency robust {fr:.3} rollout {fd:.3}",
            res.monitor.len(),
            unfiltered.median_safe_rate()
        ),
        started,
    );
}

#[test]
fn criterion_5_training_ordering() {
    let training = ensure_trained();
    let started = Instant::now() - training;
    let rows = pipeline::sweep(config()).expect("sweep");
    let adv = row(&rows, Method::Adversarial.name()).median_safe_rate();
    let dr = row(&rows, Method::SacDr.name()).median_safe_rate();
    let sac = row(&rows, Method::Sac.name()).median_safe_rate();
    let pass = adv >= dr + 0.05 && adv >= sac + 0.10 && started.elapsed().as_secs() < 4 * 3600;
    let per_seed = |r: &MetricsRow| r.per_seed.iter().map(|s| format!("{:.3}", s.safe_rate)).collect::<Vec<_>>().join("/");
    report(
        5,
        "training ordering",
        pass,
        &format!(
            "training {:.0}s in this process; median safe rate under oracle attack at d_max {}: adversarial {adv:.3} ({}), sac-dr {dr:.3} ({}), sac {sac:.3} ({})",
            training.as_secs_f64(),
            config().max_d(),
            per_seed(row(&rows, "adversarial")),
            per_seed(row(&rows, "sac-dr")),
            per_seed(row(&rows, "sac")),
        ),
        started,
    );
}

#[test]
fn criterion_6_critic_confusion() {
    ensure_trained();
    let started = Instant::now();
    let counts = pipeline::confusion(config()).expect("confusion");
    let fs: Vec<f64> = counts.iter().map(|(_, c)| c.false_safe_rate()).collect();
    let fu: Vec<f64> = counts.iter().map(|(_, c)| c.false_unsafe_rate()).collect();
    let pass = median(&fs) < 0.10 && fu.iter().all(|v| v.is_finite());
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    report(
        6,
        "critic confusion",
        pass,
        &format!("median false-safe {:.3} (seeds {}), false-unsafe {:.3} (seeds {})", median(&fs), fmt(&fs), median(&fu), fmt(&fu)),
        started,
    );
}

/// Small end-to-end configuration for the determinism check.
fn small_config(cache: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        cache_dir: cache.to_path_buf(),
        grid: GridConfig {
            shape: [21, 9, 11],
            tol: 1e-4,
            ..Default::default()
        },
        train: TrainConfig {
            total_steps: 3_000,
            warmup_phase_steps: 1_000,
            disturbance_phase_steps: 500,
            warmup_steps: 500,
            steps_per_round: 500,
            episode_length: 50,
            batch_size: 32,
            policy_hidden: vec![16, 16],
            critic_hidden: vec![16, 16],
            match_count: 2,
            eval_episodes: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.experiments.seeds = vec![0, 1];
    cfg.experiments.d_max_list = vec![0.05, 0.1];
    cfg.experiments.n_rollouts = 8;
    cfg.experiments.episode_length = 50;
    cfg
}

fn metrics_bytes(cfg: &ExperimentConfig, dir: &Path) -> Vec<u8> {
    let rows = pipeline::sweep(cfg).expect("sweep");
    let mut rows = rows;
    let conf = pipeline::confusion(cfg).expect("confusion");
    rows.push(MetricsRow {
        experiment: "confusion".into(),
        label: "false-safe".into(),
        param: 0.0,
        per_seed: conf
            .iter()
            .map(|(seed, c)| gamesafe::experiment::SeedMetrics {
                seed: *seed,
                rollouts: c.total(),
                safe_rate: c.false_safe_rate(),
                filter_frequency: c.false_unsafe_rate(),
            })
            .collect(),
    });
    let path = dir.join("metrics.csv");
    emit_metrics(&rows, &path).expect("emit");
    std::fs::read(&path).unwrap()
}

#[test]
fn criterion_7_determinism_and_io() {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = small_config(dir.path());
            pool.install(|| metrics_bytes(&cfg, dir.path()))
        })
        .collect();
    let csv_equal = runs[0] == runs[1] && !runs[0].is_empty();

    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let grid = pool.install(|| pipeline::training_grid(&cfg)).unwrap();
    let a = dir.path().join("grid-a.bin");
    let b = dir.path().join("grid-b.bin");
    grid.save(&a).unwrap();
    let loaded = GridValueFunction::load(&a).unwrap();
    loaded.save(&b).unwrap();
    let grid_ok = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap()
        && grid.values.iter().zip(&loaded.values).all(|(x, y)| x.to_bits() == y.to_bits())
        && grid.axes == loaded.axes;

    let trained = pipeline::trained_all(&cfg, &[Method::Adversarial]).unwrap();
    let p = &trained[0][0];
    let pa = dir.path().join("policy-a.bin");
    let pb = dir.path().join("policy-b.bin");
    io::save_policy(&p.control, &pa).unwrap();
    io::save_policy(&io::load_policy(&pa).unwrap(), &pb).unwrap();
    let ca = dir.path().join("critic-a.bin");
    let cb = dir.path().join("critic-b.bin");
    io::save_critic(&p.critic, &ca).unwrap();
    let critic = io::load_critic(&ca).unwrap();
    io::save_critic(&critic, &cb).unwrap();
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let weights_ok = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap()
        && std::fs::read(&ca).unwrap() == std::fs::read(&cb).unwrap()
        && bits(critic.net.params()) == bits(p.critic.net.params())
        && bits(io::load_policy(&pa).unwrap().net.params()) == bits(p.control.net.params());
    report(
        7,
        "determinism and io",
        csv_equal && grid_ok && weights_ok,
        &format!(
            "rerun csv identical {csv_equal} ({} bytes), grid round trip {grid_ok}, weight round trip {weights_ok}",
            runs[0].len()
        ),
        started,
    );
}
