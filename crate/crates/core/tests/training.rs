use gamesafe::grid::{linspace, solve, ActionGrid, SolveOptions};
use gamesafe::train::{critic_value, train, Method, TrainConfig};
use gamesafe::toy::ToyGame;

fn toy_config() -> TrainConfig {
    TrainConfig {
        seed: 3,
        gamma: 0.9,
        episode_length: 30,
        batch_size: 64,
        buffer_capacity: 20_000,
        policy_hidden: vec![32, 32],
        critic_hidden: vec![32, 32],
        updates_per_step: 0.5,
        warmup_steps: 1_000,
        alpha_control: 0.01,
        alpha_disturbance: 0.01,
        steps_per_round: 2_000,
        warmup_phase_steps: 4_000,
        disturbance_phase_steps: 2_000,
        total_steps: 16_000,
        match_count: 5,
        eval_episodes: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn adversarial_critic_sign_matches_the_toy_oracle() {
    let toy = ToyGame::default();
    let cfg = toy_config();
    let out = train(&toy, &cfg, Method::Adversarial, None).unwrap();
    assert_eq!(out.env_steps, cfg.total_steps);
    assert!(out.leaderboard.is_some());

    let actions = ActionGrid::from_points(
        (-4..=4).map(|k| vec![k as f64 * 0.25]).collect(),
        (-2..=2).map(|k| vec![k as f64 * 0.25]).collect(),
    );
    let opts = SolveOptions {
        gamma: cfg.gamma,
        tol: 1e-10,
        ..Default::default()
    };
    let oracle = solve(&toy, vec![linspace(-2.0, 2.0, 81)], &actions, &opts).unwrap().value;
    let mut agree = 0;
    for i in 0..oracle.len() {
        let x = oracle.node(i);
        let learned = critic_value(&toy, &out.critic, &out.control, out.disturbance.as_ref(), cfg.gamma, &x).unwrap();
        if (learned >= 0.0) == (oracle.values[i] >= 0.0) {
            agree += 1;
        }
    }
    let rate = agree as f64 / oracle.len() as f64;
    assert!(rate >= 0.9, "critic sign agreement {rate}");
}
