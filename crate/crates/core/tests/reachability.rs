use gamesafe::geometry::{Point, Rect};
use gamesafe::zonotope::{occupied_region, propagate, Zonotope};
use gamesafe::BoxSet;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zonotope_strategy(max_dim: usize, max_gens: usize) -> impl Strategy<Value = Zonotope> {
    (1..=max_dim, 1..=max_gens, any::<u64>()).prop_map(|(n, m, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let g = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        Zonotope::new(c, g)
    })
}

/// Point of `z` with coefficients drawn from `[-1, 1]`, pulled toward the
/// center by `shrink` to stay clear of LP round-off on the boundary.
fn sample_point(z: &Zonotope, rng: &mut ChaCha8Rng, shrink: f64) -> Vec<f64> {
    let beta = DVector::from_fn(z.generators.ncols(), |_, _| shrink * rng.random_range(-1.0..=1.0));
    (&z.center + &z.generators * beta).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reduction_contains_the_original(z in zonotope_strategy(4, 12), seed in any::<u64>()) {
        let target = z.dim() + 1;
        let r = z.reduce(target);
        prop_assert!(r.order() <= target.max(z.dim()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let p = sample_point(&z, &mut rng, 0.999);
            prop_assert!(r.contains(&p), "point {:?} escaped the reduction", p);
        }
        let (hz, hr) = (z.interval_hull(), r.interval_hull());
        for i in 0..z.dim() {
            prop_assert!(hr.lo[i] <= hz.lo[i] + 1e-12 && hr.hi[i] >= hz.hi[i] - 1e-12);
        }
    }

    #[test]
    fn interval_hull_is_additive(a in zonotope_strategy(3, 6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = a.dim();
        let b = Zonotope::new(
            DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0)),
        );
        let (ha, hb, hs) = (a.interval_hull(), b.interval_hull(), a.minkowski(&b).interval_hull());
        for i in 0..n {
            prop_assert!((hs.lo[i] - (ha.lo[i] + hb.lo[i])).abs() < 1e-12);
            prop_assert!((hs.hi[i] - (ha.hi[i] + hb.hi[i])).abs() < 1e-12);
        }
    }

    /// Error recursion `e_{τ+1} = A_τ e_τ + B_τ d_τ + r_τ` with `|r_τ| ≤ E_τ`
    /// stays inside the propagated tube, including after generator
    /// reduction.
    #[test]
    fn linear_tube_is_sound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, horizon) = (3, 2, 12);
        let a: Vec<DMatrix<f64>> = (0..=horizon)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.6..0.6)))
            .collect();
        let b: Vec<DMatrix<f64>> = (0..=horizon)
            .map(|_| DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let d_box = BoxSet::symmetric(k, 0.3);
        let e: Vec<Vec<f64>> = (0..=horizon).map(|_| (0..n).map(|_| rng.random_range(0.0..0.05)).collect()).collect();
        let tube = propagate(&a, &b, &d_box, &e, 8);
        for _ in 0..10 {
            let mut err = vec![0.0; n];
            for tau in 0..=horizon {
                let d = DVector::from_fn(k, |_, _| 0.999 * 0.3 * rng.random_range(-1.0..=1.0));
                let mut next = &b[tau] * d;
                if tau > 0 {
                    next += &a[tau] * DVector::from_column_slice(&err);
                }
                for i in 0..n {
                    next[i] += 0.999 * e[tau][i] * rng.random_range(-1.0..=1.0);
                }
                err = next.iter().copied().collect();
                let set = tube.at(tau + 1).unwrap();
                prop_assert!(set.contains(&err), "escaped at τ+1 = {}", tau + 1);
            }
        }
    }

    /// Footprint corners at any pose inside `nominal ⊕ R` lie in the
    /// occupied region.
    #[test]
    fn occupied_region_covers_sampled_poses(
        px in -5.0f64..5.0, py in -1.0f64..1.0, psi in -1.2f64..1.2,
        spread in 0.0f64..0.3, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(3, 5, |_, _| spread * rng.random_range(-1.0..1.0));
        let z = Zonotope::new(DVector::zeros(3), g);
        let fp = Rect::new(0.0, 0.5, -0.1, 0.1);
        let region = occupied_region([px, py, psi], Some(&z), [0, 1, 2], &fp);
        for _ in 0..50 {
            let e = sample_point(&z, &mut rng, 1.0);
            let (x, y, h) = (px + e[0], py + e[1], psi + e[2]);
            prop_assert!(region.psi_lo <= h + 1e-12 && h <= region.psi_hi + 1e-12);
            let (s, c) = h.sin_cos();
            for q in fp.corners() {
                let w: Point = [x + c * q[0] - s * q[1], y + s * q[0] + c * q[1]];
                prop_assert!(inside(&region.polygon, w), "corner {:?} outside region", w);
            }
        }
    }
}

/// Membership in a counter-clockwise convex polygon with a small tolerance.
fn inside(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        cross >= -1e-9 * len.max(1.0)
    })
}
