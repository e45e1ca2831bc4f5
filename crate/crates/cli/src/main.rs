use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use gamesafe::artifacts::{reduced_car_grid, trained_methods};
use gamesafe::config::ExperimentConfig;
use gamesafe::experiment::{closed_loop, dump_trajectories, emit_metrics, FilterKind, TraceStepRecord, TrajectoryRecord, SCHEMA_VERSION};
use gamesafe::filter::{certificate_monitor, RobustOptions};
use gamesafe::ilqr::IlqrPolicy;
use gamesafe::players::{
    stream_rng, uniform_in, CornerDisturbance, Disturber, LaneKeeper, OracleDisturbance, UniformDisturbance, ZeroDisturbance,
};
use gamesafe::train::{write_log_csv, Method};
use gamesafe::vehicle::sample_initial_state;
use gamesafe::{pipeline, BoxSet, Error, ReducedCar, System};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "gamesafe", version, about = "Adversarial safety-policy training and robust safety filtering")]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adversarial training of the safety controller and disturbance.
    Train,
    /// Baseline training (SAC or SAC with randomized disturbances).
    TrainBaseline {
        #[arg(long, value_enum, default_value = "sac")]
        method: Baseline,
    },
    /// Solves the reduced-car oracle grid.
    SolveGrid,
    /// Safe rate of trained controllers across disturbance bounds.
    Sweep,
    /// Critic sign confusion against the oracle grid.
    Confusion,
    /// Filter comparison on hard initial states.
    FilterEval,
    /// One closed-loop trace with the chosen filter and attacker.
    Simulate {
        #[arg(long, value_enum, default_value = "robust")]
        filter: SimFilter,
        #[arg(long, value_enum, default_value = "uniform")]
        attacker: SimAttacker,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
    /// Quick property checks of the filter on seeded traces.
    Check {
        #[arg(long, default_value_t = 5)]
        traces: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Sac,
    SacDr,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimFilter {
    None,
    Rollout,
    Robust,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimAttacker {
    None,
    Uniform,
    Corner,
    Oracle,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
            ExitCode::from(if config_error { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.experiments.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Train => train(&cfg, &[Method::Adversarial], &out),
        Command::TrainBaseline { method } => {
            let m = match method {
                Baseline::Sac => Method::Sac,
                Baseline::SacDr => Method::SacDr,
            };
            train(&cfg, &[m], &out)
        }
        Command::SolveGrid => {
            let env = pipeline::training_env(&cfg);
            let grid = reduced_car_grid(&env, &cfg.grid, &cfg.cache_dir)?;
            let path = out.join("grid.bin");
            grid.save(&path)?;
            let safe = grid.values.iter().filter(|v| **v >= 0.0).count();
            println!("{} nodes, safe fraction {}", grid.len(), safe as f64 / grid.len() as f64);
            Ok(())
        }
        Command::Sweep => {
            let rows = pipeline::sweep(&cfg)?;
            emit_metrics(&rows, &out.join("sweep_metrics.csv"))?;
            for r in &rows {
                println!("{} d_max={} safe_rate={:.3}±{:.3}", r.label, r.param, r.mean_safe_rate(), r.std_safe_rate());
            }
            Ok(())
        }
        Command::Confusion => {
            let res = pipeline::confusion(&cfg)?;
            let mut s = String::from("seed,true_safe,true_unsafe,false_safe,false_unsafe,false_safe_rate,false_unsafe_rate\n");
            for (seed, c) in &res {
                s.push_str(&format!(
                    "{seed},{},{},{},{},{},{}\n",
                    c.true_safe,
                    c.true_unsafe,
                    c.false_safe,
                    c.false_unsafe,
                    c.false_safe_rate(),
                    c.false_unsafe_rate()
                ));
                println!("seed {seed}: false-safe {:.4} false-unsafe {:.4}", c.false_safe_rate(), c.false_unsafe_rate());
            }
            let p = out.join("confusion.csv");
            fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
            Ok(())
        }
        Command::FilterEval => {
            let res = pipeline::filter_eval(&cfg)?;
            pipeline::write_filter_eval(&res, &out)?;
            for r in &res.rows {
                println!(
                    "{}: safe_rate median {:.3}, filter_frequency median {:.3}",
                    r.label,
                    r.median_safe_rate(),
                    r.median_filter_frequency()
                );
            }
            let violations: usize = res.monitor.iter().map(|(_, v)| v.violations.len()).sum();
            if violations > 0 {
                bail!("monitor found {violations} violations of the certified horizon");
            }
            Ok(())
        }
        Command::Simulate { filter, attacker, steps } => {
            let rec = simulate(&cfg, *filter, *attacker, *steps)?;
            dump_trajectories(std::slice::from_ref(&rec), &out.join("trace.jsonl"))?;
            println!("safe={} steps={} filter_frequency={:.3}", rec.safe, rec.steps.len(), rec.filter_frequency());
            Ok(())
        }
        Command::Check { traces } => check(&cfg, *traces),
    }
}

fn train(cfg: &ExperimentConfig, methods: &[Method], out: &Path) -> anyhow::Result<()> {
    let env = pipeline::training_env(cfg);
    for &seed in &cfg.experiments.seeds {
        let tc = pipeline::seeded_train_config(cfg, seed);
        let trained = trained_methods(&env, &tc, methods, &cfg.cache_dir)?;
        for (m, p) in methods.iter().zip(&trained) {
            let dir = out.join(format!("{}-seed{seed}", m.name()));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            gamesafe::nn::io::save_policy(&p.control, &dir.join("control.bin"))?;
            if let Some(d) = &p.disturbance {
                gamesafe::nn::io::save_policy(d, &dir.join("disturbance.bin"))?;
            }
            gamesafe::nn::io::save_critic(&p.critic, &dir.join("critic.bin"))?;
            let cached = gamesafe::artifacts::train_dir(&env, &tc, *m, &cfg.cache_dir).join("train_log.csv");
            if cached.exists() {
                fs::copy(&cached, dir.join("train_log.csv")).with_context(|| format!("copying {}", cached.display()))?;
            } else {
                write_log_csv(&[], &dir.join("train_log.csv"))?;
            }
            println!("{} seed {seed}: saved to {}", m.name(), dir.display());
        }
    }
    Ok(())
}

/// Robust or rollout filter around iLQR with a lane-keeping fallback; no
/// trained artifacts are needed unless the oracle attacker is chosen.
fn simulate(cfg: &ExperimentConfig, filter: SimFilter, attacker: SimAttacker, steps: usize) -> anyhow::Result<TrajectoryRecord> {
    let seed = *cfg.experiments.seeds.first().ok_or_else(|| anyhow!("no seed"))?;
    let car = ReducedCar::new(pipeline::training_env(cfg));
    let fallback = LaneKeeper {
        sys: &car,
        k_py: 2.0,
        k_psi: 2.0,
    };
    let task = IlqrPolicy::new(&car, cfg.filters.task.clone());
    let grid;
    let actions = cfg.grid.actions(&car);
    let zero = ZeroDisturbance(car.disturbance_dim());
    let uniform = UniformDisturbance(car.disturbance_set().clone());
    let corner = CornerDisturbance(car.disturbance_set().clone());
    let oracle;
    let dist: &dyn Disturber = match attacker {
        SimAttacker::None => &zero,
        SimAttacker::Uniform => &uniform,
        SimAttacker::Corner => &corner,
        SimAttacker::Oracle => {
            grid = pipeline::training_grid(cfg)?;
            oracle = OracleDisturbance {
                value: &grid,
                sys: &car,
                actions: &actions,
            };
            &oracle
        }
    };
    let horizon = cfg.filters.horizon;
    let kind = match filter {
        SimFilter::None => FilterKind::Unfiltered,
        SimFilter::Rollout => FilterKind::DirectRollout {
            horizon,
            attacker: &corner,
        },
        SimFilter::Robust => FilterKind::Robust {
            horizon,
            options: RobustOptions {
                tracking: cfg.filters.tracking.clone(),
                skip_tube: false,
            },
        },
    };
    let mut rng = stream_rng(seed, 21, 0);
    let x0 = sample_initial_state(&car, &mut rng)?;
    let (trace, safe) = closed_loop(&car, &x0, &kind, &task, &fallback, dist, steps, &mut rng);
    Ok(TrajectoryRecord {
        schema_version: SCHEMA_VERSION,
        label: "simulate".into(),
        seed,
        index: 0,
        safe,
        steps: trace.iter().map(TraceStepRecord::from).collect(),
    })
}

/// Runs the robust filter on a few seeded traces against corner-extreme
/// disturbances and checks the certified-horizon property on each. Traces
/// start near the lane center past the centered obstacle, where the lane
/// keeper fallback can be certified.
fn check(cfg: &ExperimentConfig, traces: usize) -> anyhow::Result<()> {
    let seed = *cfg.experiments.seeds.first().ok_or_else(|| anyhow!("no seed"))?;
    let car = ReducedCar::new(pipeline::training_env(cfg));
    let fallback = LaneKeeper {
        sys: &car,
        k_py: 2.0,
        k_psi: 2.0,
    };
    let corner = CornerDisturbance(car.disturbance_set().clone());
    let horizon = cfg.filters.horizon;
    let kind = FilterKind::Robust {
        horizon,
        options: RobustOptions {
            tracking: cfg.filters.tracking.clone(),
            skip_tube: false,
        },
    };
    let mut failures = 0;
    for i in 0..traces {
        let task = IlqrPolicy::new(&car, cfg.filters.task.clone());
        let mut rng = stream_rng(seed, 22, i as u64);
        let x0 = uniform_in(&BoxSet::new(vec![10.6, -0.1, -0.2], vec![12.5, 0.1, 0.2]), &mut rng);
        let (trace, _) = closed_loop(&car, &x0, &kind, &task, &fallback, &corner, cfg.experiments.episode_length, &mut rng);
        let controls_ok = trace.iter().all(|s| car.control_set().contains(&s.control));
        let verdict = certificate_monitor(&trace, horizon);
        let ok = controls_ok && verdict.safe();
        println!(
            "trace {i}: {} ({} certified steps, controls in bounds: {controls_ok})",
            if ok { "PASS" } else { "FAIL" },
            verdict.certified_steps
        );
        failures += usize::from(!ok);
    }
    if failures > 0 {
        bail!("{failures} of {traces} traces failed");
    }
    Ok(())
}
