//! Zonotopes `{c + Gβ : ‖β‖∞ ≤ 1}` and tracking-error reachable tubes.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::Serialize;

use crate::geometry::{convex_hull, Point, Rect};
use crate::system::BoxSet;
use crate::vehicle::Track;

/// Default cap on generator columns.
pub const DEFAULT_MAX_GENERATORS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    pub center: DVector<f64>,
    /// One generator per column.
    pub generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Self {
        assert_eq!(center.len(), generators.nrows(), "generator rows must match the center");
        Self { center, generators }
    }

    pub fn point(center: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(center), DMatrix::zeros(center.len(), 0))
    }

    /// Axis-aligned box; zero half-widths contribute no generator.
    pub fn from_box(center: &[f64], half_widths: &[f64]) -> Self {
        assert_eq!(center.len(), half_widths.len());
        debug_assert!(half_widths.iter().all(|h| *h >= 0.0));
        let n = center.len();
        let axes: Vec<usize> = (0..n).filter(|&i| half_widths[i] > 0.0).collect();
        let g = DMatrix::from_fn(n, axes.len(), |i, j| if i == axes[j] { half_widths[i] } else { 0.0 });
        Self::new(DVector::from_column_slice(center), g)
    }

    pub fn from_box_set(b: &BoxSet) -> Self {
        Self::from_box(&b.center(), &b.half_widths())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn order(&self) -> usize {
        self.generators.ncols()
    }

    pub fn linear_map(&self, m: &DMatrix<f64>) -> Self {
        Self::new(m * &self.center, m * &self.generators)
    }

    pub fn translate(&self, offset: &[f64]) -> Self {
        Self::new(&self.center + DVector::from_column_slice(offset), self.generators.clone())
    }

    pub fn minkowski(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "Minkowski sum of different dimensions");
        let (n, k1, k2) = (self.dim(), self.order(), other.order());
        let mut g = DMatrix::zeros(n, k1 + k2);
        g.columns_mut(0, k1).copy_from(&self.generators);
        g.columns_mut(k1, k2).copy_from(&other.generators);
        Self::new(&self.center + &other.center, g)
    }

    /// Half-widths of the interval hull: row sums of `|G|`.
    pub fn radius(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.generators.row(i).iter().map(|v| v.abs()).sum())
            .collect()
    }

    pub fn interval_hull(&self) -> BoxSet {
        let r = self.radius();
        BoxSet::new(
            self.center.iter().zip(&r).map(|(c, r)| c - r).collect(),
            self.center.iter().zip(&r).map(|(c, r)| c + r).collect(),
        )
    }

    /// Outer approximation with at most `max_generators` columns: the
    /// smallest generators (by Euclidean norm) are replaced by their
    /// interval hull.
    pub fn reduce(&self, max_generators: usize) -> Self {
        let n = self.dim();
        assert!(max_generators >= n, "generator cap must be at least the dimension");
        let k = self.order();
        if k <= max_generators {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..k).collect();
        let norms: Vec<f64> = (0..k).map(|j| self.generators.column(j).norm()).collect();
        idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let keep = max_generators - n;
        let mut boxed = vec![0.0; n];
        for &j in &idx[keep..] {
            for (i, b) in boxed.iter_mut().enumerate() {
                *b += self.generators[(i, j)].abs();
            }
        }
        let mut kept: Vec<usize> = idx[..keep].to_vec();
        kept.sort_unstable();
        let axes: Vec<usize> = (0..n).filter(|&i| boxed[i] > 0.0).collect();
        let mut g = DMatrix::zeros(n, kept.len() + axes.len());
        for (c, &j) in kept.iter().enumerate() {
            g.set_column(c, &self.generators.column(j));
        }
        for (c, &i) in axes.iter().enumerate() {
            g[(i, kept.len() + c)] = boxed[i];
        }
        Self::new(self.center.clone(), g)
    }

    /// Exact membership: feasibility of `Gβ = p − c`, `‖β‖∞ ≤ 1`.
    pub fn contains(&self, p: &[f64]) -> bool {
        assert_eq!(p.len(), self.dim());
        let hull = self.interval_hull();
        let tol = 1e-9;
        if (0..self.dim()).any(|i| p[i] < hull.lo[i] - tol || p[i] > hull.hi[i] + tol) {
            return false;
        }
        if self.order() == 0 {
            return true;
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let beta: Vec<_> = (0..self.order()).map(|_| lp.add_var(0.0, (-1.0, 1.0))).collect();
        for i in 0..self.dim() {
            let mut e = LinearExpr::empty();
            for (j, b) in beta.iter().enumerate() {
                let gij = self.generators[(i, j)];
                if gij != 0.0 {
                    e.add(*b, gij);
                }
            }
            lp.add_constraint(e, ComparisonOp::Eq, p[i] - self.center[i]);
        }
        lp.solve().is_ok()
    }

    /// Member `c + Gβ` for `β` drawn uniformly from the unit cube.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let beta = DVector::from_fn(self.order(), |_, _| rng.random_range(-1.0..=1.0));
        (&self.center + &self.generators * beta).as_slice().to_vec()
    }

    /// Member `c + Gβ` for a random vertex `β ∈ {−1, 1}^k`.
    pub fn sample_vertex(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let beta = DVector::from_fn(self.order(), |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        (&self.center + &self.generators * beta).as_slice().to_vec()
    }
}

/// Error sets `ℛ_1 … ℛ_{H+1}` of one plan; `sets[i]` is `ℛ_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrsTube {
    pub sets: Vec<Zonotope>,
}

impl FrsTube {
    pub fn horizon(&self) -> usize {
        self.sets.len().saturating_sub(1)
    }

    /// `ℛ_τ` for `τ ≥ 1`; `ℛ_0` is the zero point.
    pub fn at(&self, tau: usize) -> Option<&Zonotope> {
        if tau == 0 {
            None
        } else {
            self.sets.get(tau - 1)
        }
    }

    pub fn generator_counts(&self) -> Vec<usize> {
        self.sets.iter().map(Zonotope::order).collect()
    }

    pub fn dump(&self) -> Vec<ZonotopeDump> {
        self.sets.iter().map(ZonotopeDump::from).collect()
    }
}

/// Plain-data view for JSON dumps.
#[derive(Debug, Clone, Serialize)]
pub struct ZonotopeDump {
    pub center: Vec<f64>,
    /// Column-major generators.
    pub generators: Vec<Vec<f64>>,
    pub hull_lo: Vec<f64>,
    pub hull_hi: Vec<f64>,
}

impl From<&Zonotope> for ZonotopeDump {
    fn from(z: &Zonotope) -> Self {
        let h = z.interval_hull();
        Self {
            center: z.center.as_slice().to_vec(),
            generators: (0..z.order()).map(|j| z.generators.column(j).iter().cloned().collect()).collect(),
            hull_lo: h.lo,
            hull_hi: h.hi,
        }
    }
}

/// `ℛ_1 = B_0𝒟 ⊕ ℰ_0`, `ℛ_{τ+1} = A_τℛ_τ ⊕ B_τ𝒟 ⊕ ℰ_τ` with fixed
/// remainder boxes. `a`, `b` and `e` are indexed by `τ = 0..=H`; `a[0]` is
/// unused.
pub fn propagate(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    d_box: &BoxSet,
    e: &[Vec<f64>],
    max_generators: usize,
) -> FrsTube {
    propagate_with(a, b, d_box, max_generators, |tau, _| e[tau].clone())
}

/// Like [`propagate`], with `ℰ_τ` computed from `ℛ_τ` (`None` at `τ = 0`).
pub fn propagate_with<F>(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    d_box: &BoxSet,
    max_generators: usize,
    mut remainder: F,
) -> FrsTube
where
    F: FnMut(usize, Option<&Zonotope>) -> Vec<f64>,
{
    assert_eq!(a.len(), b.len());
    let horizon = a.len() - 1;
    let d = Zonotope::from_box_set(d_box);
    let n = b[0].nrows();
    let zero = vec![0.0; n];
    let e0 = Zonotope::from_box(&zero, &remainder(0, None));
    let mut sets = Vec::with_capacity(horizon + 1);
    let mut r = d.linear_map(&b[0]).minkowski(&e0).reduce(max_generators);
    for tau in 1..=horizon {
        let e = Zonotope::from_box(&zero, &remainder(tau, Some(&r)));
        let next = r
            .linear_map(&a[tau])
            .minkowski(&d.linear_map(&b[tau]))
            .minkowski(&e)
            .reduce(max_generators);
        sets.push(r);
        r = next;
    }
    sets.push(r);
    FrsTube { sets }
}

/// Conservative planar region covering the footprint over all poses in
/// `nominal ⊕ (pose coordinates of R)`, plus the heading interval it spans.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupiedRegion {
    /// Convex polygon, counter-clockwise.
    pub polygon: Vec<Point>,
    pub psi_lo: f64,
    pub psi_hi: f64,
}

/// Footprint swept over a pose box.
///
/// The footprint is rotated to the extreme and middle headings of the
/// interval; the hull of those corners is inflated by the chord sagitta
/// `ρ_max (1 − cos(h/2))`, `h` the angular spacing of the samples, and
/// Minkowski-summed with the position box.
pub fn occupied_region(nominal_pose: [f64; 3], error: Option<&Zonotope>, pose_indices: [usize; 3], footprint: &Rect) -> OccupiedRegion {
    let (lo, hi) = match error {
        Some(z) => {
            let h = z.interval_hull();
            (pose_indices.map(|i| h.lo[i]), pose_indices.map(|i| h.hi[i]))
        }
        None => ([0.0; 3], [0.0; 3]),
    };
    let psi_lo = nominal_pose[2] + lo[2];
    let psi_hi = nominal_pose[2] + hi[2];
    let psi_mid = 0.5 * (psi_lo + psi_hi);
    let corners = footprint.corners();
    let mut body: Vec<Point> = Vec::with_capacity(12);
    for psi in [psi_lo, psi_mid, psi_hi] {
        let (s, c) = psi.sin_cos();
        body.extend(corners.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]));
    }
    let rho = corners.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
    let spacing = 0.5 * (psi_hi - psi_lo);
    let sagitta = rho * (1.0 - (0.5 * spacing).cos());
    let x0 = nominal_pose[0] + lo[0] - sagitta;
    let x1 = nominal_pose[0] + hi[0] + sagitta;
    let y0 = nominal_pose[1] + lo[1] - sagitta;
    let y1 = nominal_pose[1] + hi[1] + sagitta;
    let mut pts = Vec::with_capacity(body.len() * 4);
    for p in convex_hull(&body) {
        for (dx, dy) in [(x0, y0), (x1, y0), (x1, y1), (x0, y1)] {
            pts.push([p[0] + dx, p[1] + dy]);
        }
    }
    OccupiedRegion {
        polygon: convex_hull(&pts),
        psi_lo,
        psi_hi,
    }
}

/// Whether the region may meet the failure set: road band, heading limit
/// or an obstacle.
pub fn violates_constraints(region: &OccupiedRegion, track: &Track) -> bool {
    region.psi_lo < -track.heading_limit
        || region.psi_hi > track.heading_limit
        || track.region_hits_failure(&region.polygon)
}

/// Whether `ū ⊕ K R` lies inside the control box (interval-hull test).
pub fn controls_within(u_bar: &[f64], gain: &DMatrix<f64>, error: Option<&Zonotope>, controls: &BoxSet) -> bool {
    match error {
        None => controls.contains(u_bar),
        Some(z) => {
            let h = z.linear_map(gain).interval_hull();
            (0..u_bar.len()).all(|i| u_bar[i] + h.lo[i] >= controls.lo[i] && u_bar[i] + h.hi[i] <= controls.hi[i])
        }
    }
}
