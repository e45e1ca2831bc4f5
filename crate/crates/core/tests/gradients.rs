mod support;

use gamesafe::nn::Critic;
use gamesafe::{EnvSpec, ReducedCar};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{mlp_gradient_error, policy_gradient_error, random_matrix, rel_err, FD_STEP};

#[test]
fn mlp_gradients_match_finite_differences() {
    let worst = mlp_gradient_error(11, 100);
    assert!(worst < 1e-5, "gradient error {worst}");
}

#[test]
fn policy_gradients_through_squash_and_log_prob() {
    let worst = policy_gradient_error(12, 100);
    assert!(worst < 1e-5, "policy gradient error {worst}");
}

#[test]
fn critic_input_gradients_split_by_argument() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let car = ReducedCar::new(EnvSpec::default());
    let critic = Critic::new(&car, &[16, 16], &mut rng);
    let xs = random_matrix(&mut rng, 3, 2);
    let us = random_matrix(&mut rng, 1, 2);
    let ds = random_matrix(&mut rng, 3, 2) * 0.1;
    let seed = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
    let (_, tape) = critic.q_tape(&xs, &us, &ds).unwrap();
    let (_, gi) = critic.backward(&tape, &seed);
    let f = |us: &DMatrix<f64>, ds: &DMatrix<f64>| critic.q_batch(&xs, us, ds).unwrap().component_mul(&seed).sum();
    for c in 0..2 {
        let mut up = us.clone();
        up[(0, c)] += FD_STEP;
        let mut um = us.clone();
        um[(0, c)] -= FD_STEP;
        assert!(rel_err((f(&up, &ds) - f(&um, &ds)) / (2.0 * FD_STEP), gi.du[(0, c)]) < 1e-5);
        for r in 0..3 {
            let mut dp = ds.clone();
            dp[(r, c)] += FD_STEP;
            let mut dm = ds.clone();
            dm[(r, c)] -= FD_STEP;
            assert!(rel_err((f(&us, &dp) - f(&us, &dm)) / (2.0 * FD_STEP), gi.dd[(r, c)]) < 1e-5);
        }
    }
}
