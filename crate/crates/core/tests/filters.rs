use gamesafe::experiment::{closed_loop, FilterKind};
use gamesafe::filter::{certificate_monitor, value_filter, Branch, RobustOptions};
use gamesafe::grid::{linspace, optimal_control, solve, ActionGrid, SolveOptions};
use gamesafe::players::{ConstantController, Disturber};
use gamesafe::toy::ToyGame;
use gamesafe::{EnvSpec, ReducedCar, System};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pushes the car up and to the left at the full bound.
struct Push(Vec<f64>);

impl Disturber for Push {
    fn disturbance(&self, _x: &[f64], _u: &[f64], _rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.0.clone()
    }
}

/// Straight driving just below an obstacle: the nominal rollout clears it,
/// a constant sideways push does not.
fn near_obstacle() -> (ReducedCar, Vec<f64>) {
    let car = ReducedCar::new(EnvSpec::default());
    (car, vec![12.0, 0.08, 0.0])
}

fn run(skip_tube: bool) -> (Vec<gamesafe::filter::TraceStep>, bool) {
    let (car, x0) = near_obstacle();
    let straight = ConstantController(vec![0.0]);
    let push = Push(vec![0.0, car.spec.d_max, car.spec.d_max]);
    let filter = FilterKind::Robust {
        horizon: 20,
        options: RobustOptions {
            skip_tube,
            ..Default::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    closed_loop(&car, &x0, &filter, &straight, &straight, &push, 60, &mut rng)
}

#[test]
fn stubbed_tube_check_is_caught_by_the_monitor() {
    let (trace, safe) = run(true);
    assert!(!safe, "the push should cause a collision");
    assert!(trace[0].certified);
    let verdict = certificate_monitor(&trace, 20);
    assert!(!verdict.safe());
    let v = &verdict.violations[0];
    assert!(v.failed_at > v.certified_at && v.failed_at <= v.certified_at + 21);
}

#[test]
fn full_tube_check_never_certifies_a_doomed_plan() {
    let (trace, _) = run(false);
    assert!(certificate_monitor(&trace, 20).safe());
    assert!(trace.iter().all(|s| s.branch == Branch::FallbackPolicy || s.certified || s.branch == Branch::FallbackGain));
}

fn toy_oracle() -> (ToyGame, gamesafe::grid::GridValueFunction, ActionGrid) {
    let toy = ToyGame::default();
    let axes = vec![linspace(-2.0, 2.0, 17)];
    let actions = ActionGrid::from_points(
        (-4..=4).map(|k| vec![k as f64 * 0.25]).collect(),
        (-2..=2).map(|k| vec![k as f64 * 0.25]).collect(),
    );
    let opts = SolveOptions {
        gamma: 0.95,
        tol: 1e-12,
        ..Default::default()
    };
    let v = solve(&toy, axes, &actions, &opts).unwrap().value;
    (toy, v, actions)
}

proptest! {
    /// With the oracle value and ε = 0 the task control passes exactly when
    /// the value is nonnegative, and from such states the oracle control
    /// keeps the worst-case successor value nonnegative.
    #[test]
    fn oracle_value_filter_keeps_successors_safe(node in 0usize..17, task in -1.0f64..1.0) {
        let (toy, v, actions) = toy_oracle();
        let x = v.node(node);
        let value = v.interpolate(&x);
        let (u_star, _) = optimal_control(&v, &toy, &x, &actions);
        let (u, filtered) = value_filter(value, 0.0, vec![task], || u_star.clone());
        prop_assert_eq!(filtered, value < 0.0);
        if value >= 0.0 {
            prop_assert_eq!(u, vec![task]);
            let worst = actions
                .disturbances
                .iter()
                .map(|d| v.interpolate(&toy.next_state(&x, &u_star, d)))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(worst >= 0.0, "oracle control leaves the safe set from {:?}", x);
        }
    }
}
