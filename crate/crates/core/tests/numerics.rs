mod support;

use gamesafe::{Car, EnvSpec, ReducedCar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{convergence_order, jacobian_error};

#[test]
fn rk4_converges_at_fourth_order() {
    let car = Car::new(EnvSpec::default());
    let p = convergence_order(&car, &[0.0, 0.1, 1.0, 0.3, 0.1], &[0.8, 0.5], &[0.02, -0.03, 0.0, 0.05, 0.0]);
    assert!((3.5..=4.5).contains(&p), "full car order {p}");
    let reduced = ReducedCar::new(EnvSpec::default());
    let p = convergence_order(&reduced, &[0.0, 0.0, 0.4], &[0.6], &[0.05, 0.0, -0.02]);
    assert!((3.5..=4.5).contains(&p), "reduced car order {p}");
}

#[test]
fn chained_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = jacobian_error(&Car::new(EnvSpec::default()), &mut rng, 200);
    assert!(e < 1e-4, "full car Jacobian error {e}");
    let e = jacobian_error(&ReducedCar::new(EnvSpec::default()), &mut rng, 200);
    assert!(e < 1e-4, "reduced car Jacobian error {e}");
}
