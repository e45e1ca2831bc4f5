//! Kinematic-bicycle race car on a straight road with box obstacles.
//!
//! The full model has state `(px, py, v, psi, delta)`, control
//! `(a, omega)` and one additive disturbance channel per state derivative.
//! [`ReducedCar`] keeps only `(px, py, psi)` at a fixed speed, with the
//! steering channel folded into a bounded yaw-rate control; it is small
//! enough for a dense grid oracle.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform, Point, Rect};
use crate::system::{BoxSet, Pose, System};

/// Maximum rejection attempts in [`sample_initial_state`].
pub const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub psi: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn new(px: f64, py: f64, v: f64, psi: f64, delta: f64) -> Self {
        Self {
            px,
            py,
            v,
            psi,
            delta,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.px, self.py, self.v, self.psi, self.delta]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Acceleration (m/s²).
    pub a: f64,
    /// Steering rate (rad/s).
    pub omega: f64,
}

impl ControlInput {
    pub fn to_array(self) -> [f64; 2] {
        [self.a, self.omega]
    }
}

/// Additive disturbance, one channel per state derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceInput(pub [f64; 5]);

impl DisturbanceInput {
    pub fn zero() -> Self {
        Self([0.0; 5])
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }
}

/// Environment description; every field defaults to the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub wheelbase: f64,
    pub dt: f64,
    pub road_half_width: f64,
    /// Car footprint in the body frame.
    pub footprint: Rect,
    /// Obstacle offsets `p^i`; obstacle `i` is the footprint box translated by `p^i`.
    pub obstacles: Vec<[f64; 2]>,
    pub accel_bound: f64,
    pub steer_rate_bound: f64,
    pub d_max: f64,
    pub heading_limit: f64,
    pub px_range: [f64; 2],
    pub py_range: [f64; 2],
    pub v_range: [f64; 2],
    pub psi_range: [f64; 2],
    pub delta_range: [f64; 2],
    /// Constant speed of the reduced car.
    pub reduced_speed: f64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            wheelbase: 0.5,
            dt: 0.1,
            road_half_width: 0.6,
            footprint: Rect::new(0.0, 0.5, -0.1, 0.1),
            obstacles: vec![
                [3.0, 0.3],
                [6.5, -0.3],
                [10.0, 0.0],
                [13.5, 0.35],
                [17.0, -0.25],
            ],
            accel_bound: 3.5,
            steer_rate_bound: 5.0,
            d_max: 0.1,
            heading_limit: FRAC_PI_2,
            px_range: [0.0, 20.0],
            py_range: [-0.6, 0.6],
            v_range: [0.4, 2.0],
            psi_range: [-FRAC_PI_2, FRAC_PI_2],
            delta_range: [-0.35, 0.35],
            reduced_speed: 1.0,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.wheelbase > 0.0) {
            return bad("wheelbase must be positive");
        }
        if !(self.d_max >= 0.0) {
            return bad("d_max must be nonnegative");
        }
        let f = &self.footprint;
        if !(f.x_max > f.x_min && f.y_max > f.y_min) {
            return bad("footprint box must be nonempty");
        }
        if self.accel_bound < 0.0 || self.steer_rate_bound < 0.0 {
            return bad("control bounds must be nonnegative");
        }
        for r in [
            self.px_range,
            self.py_range,
            self.v_range,
            self.psi_range,
            self.delta_range,
        ] {
            if r[0] > r[1] {
                return bad("state ranges must satisfy lo <= hi");
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: EnvSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Same spec with a different disturbance bound.
    pub fn with_d_max(&self, d_max: f64) -> Self {
        Self {
            d_max,
            ..self.clone()
        }
    }

    pub fn track(&self) -> Track {
        Track {
            road_half_width: self.road_half_width,
            footprint: self.footprint,
            obstacles: self
                .obstacles
                .iter()
                .map(|p| self.footprint.translated(p[0], p[1]))
                .collect(),
            heading_limit: self.heading_limit,
        }
    }

    /// Yaw-rate bound of the reduced car: `(v / L) tan(delta_max)`.
    pub fn reduced_yaw_rate_bound(&self) -> f64 {
        let delta_max = self.delta_range[1].abs().max(self.delta_range[0].abs());
        self.reduced_speed / self.wheelbase * delta_max.tan()
    }

    /// Stable content hash, used for provenance sidecars.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("EnvSpec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Breakdown of the safety margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub g: f64,
    pub g_psi: f64,
    pub g_road: f64,
    pub g_obs: f64,
}

/// Road, obstacles and footprint geometry shared by both car models.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub road_half_width: f64,
    pub footprint: Rect,
    pub obstacles: Vec<Rect>,
    pub heading_limit: f64,
}

impl Track {
    /// Footprint corners in the world frame (counter-clockwise).
    pub fn footprint_at(&self, pose: Pose) -> [Point; 4] {
        self.footprint
            .corners()
            .map(|c| transform(c, pose.psi, [pose.px, pose.py]))
    }

    pub fn margins(&self, pose: Pose) -> Margins {
        let corners = self.footprint_at(pose);
        let g_psi = self.heading_limit - pose.psi.abs();
        let max_abs_y = corners.iter().fold(0.0_f64, |m, c| m.max(c[1].abs()));
        let g_road = self.road_half_width - max_abs_y;
        let g_obs = self
            .obstacles
            .iter()
            .map(|o| o.min_signed_distance(&corners))
            .fold(f64::INFINITY, f64::min);
        Margins {
            g: g_psi.min(g_road).min(g_obs),
            g_psi,
            g_road,
            g_obs,
        }
    }

    /// Whether a set of footprint-carrying points (convex region) meets the
    /// failure set, checked conservatively: road band and obstacle boxes.
    pub fn region_hits_failure(&self, region: &[Point]) -> bool {
        if region
            .iter()
            .any(|p| p[1].abs() > self.road_half_width)
        {
            return true;
        }
        self.obstacles
            .iter()
            .any(|o| crate::geometry::convex_intersects_rect(region, &interior(o)))
    }
}

/// The failure set is open, so touching an obstacle's boundary is allowed.
fn interior(r: &Rect) -> Rect {
    const SHRINK: f64 = 1e-12;
    Rect::new(r.x_min + SHRINK, r.x_max - SHRINK, r.y_min + SHRINK, r.y_max - SHRINK)
}

/// Full five-state car.
#[derive(Debug, Clone)]
pub struct Car {
    pub spec: EnvSpec,
    pub track: Track,
    controls: BoxSet,
    disturbances: BoxSet,
    states: BoxSet,
}

impl Car {
    pub fn new(spec: EnvSpec) -> Self {
        let controls = BoxSet::new(
            vec![-spec.accel_bound, -spec.steer_rate_bound],
            vec![spec.accel_bound, spec.steer_rate_bound],
        );
        let disturbances = BoxSet::symmetric(5, spec.d_max);
        let states = BoxSet::new(
            vec![
                spec.px_range[0],
                spec.py_range[0],
                spec.v_range[0],
                spec.psi_range[0],
                spec.delta_range[0],
            ],
            vec![
                spec.px_range[1],
                spec.py_range[1],
                spec.v_range[1],
                spec.psi_range[1],
                spec.delta_range[1],
            ],
        );
        Self {
            track: spec.track(),
            spec,
            controls,
            disturbances,
            states,
        }
    }

    pub fn margins(&self, x: &VehicleState) -> Margins {
        self.track.margins(Pose {
            px: x.px,
            py: x.py,
            psi: x.psi,
        })
    }

    pub fn footprint(&self, x: &VehicleState) -> [Point; 4] {
        self.track.footprint_at(Pose {
            px: x.px,
            py: x.py,
            psi: x.psi,
        })
    }
}

impl System for Car {
    fn state_dim(&self) -> usize {
        5
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn disturbance_dim(&self) -> usize {
        5
    }
    fn dt(&self) -> f64 {
        self.spec.dt
    }
    fn control_set(&self) -> &BoxSet {
        &self.controls
    }
    fn disturbance_set(&self) -> &BoxSet {
        &self.disturbances
    }
    fn state_box(&self) -> &BoxSet {
        &self.states
    }

    fn derivative(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        let (v, psi, delta) = (x[2], x[3], x[4]);
        let (s, c) = psi.sin_cos();
        out[0] = v * c + d[0];
        out[1] = v * s + d[1];
        out[2] = u[0] + d[2];
        out[3] = v / self.spec.wheelbase * delta.tan() + d[3];
        out[4] = u[1] + d[4];
    }

    fn derivative_jacobians(
        &self,
        x: &[f64],
        _u: &[f64],
        _d: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (v, psi, delta) = (x[2], x[3], x[4]);
        let (s, c) = psi.sin_cos();
        let l = self.spec.wheelbase;
        let t = delta.tan();
        let mut jx = DMatrix::zeros(5, 5);
        jx[(0, 2)] = c;
        jx[(0, 3)] = -v * s;
        jx[(1, 2)] = s;
        jx[(1, 3)] = v * c;
        jx[(3, 2)] = t / l;
        jx[(3, 4)] = v / l * (1.0 + t * t);
        let mut ju = DMatrix::zeros(5, 2);
        ju[(2, 0)] = 1.0;
        ju[(4, 1)] = 1.0;
        (jx, ju, DMatrix::identity(5, 5))
    }

    fn margin(&self, x: &[f64]) -> f64 {
        self.margins(&VehicleState::from_slice(x)).g
    }

    fn pose(&self, x: &[f64]) -> Option<Pose> {
        Some(Pose {
            px: x[0],
            py: x[1],
            psi: x[3],
        })
    }

    fn pose_indices(&self) -> Option<[usize; 3]> {
        Some([0, 1, 3])
    }

    fn track(&self) -> Option<&Track> {
        Some(&self.track)
    }
}

/// Three-state car `(px, py, psi)` at constant speed with yaw-rate control.
#[derive(Debug, Clone)]
pub struct ReducedCar {
    pub spec: EnvSpec,
    pub track: Track,
    controls: BoxSet,
    disturbances: BoxSet,
    states: BoxSet,
}

impl ReducedCar {
    pub fn new(spec: EnvSpec) -> Self {
        let w = spec.reduced_yaw_rate_bound();
        let controls = BoxSet::new(vec![-w], vec![w]);
        let disturbances = BoxSet::symmetric(3, spec.d_max);
        let states = BoxSet::new(
            vec![spec.px_range[0], spec.py_range[0], spec.psi_range[0]],
            vec![spec.px_range[1], spec.py_range[1], spec.psi_range[1]],
        );
        Self {
            track: spec.track(),
            spec,
            controls,
            disturbances,
            states,
        }
    }
}

impl System for ReducedCar {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        3
    }
    fn dt(&self) -> f64 {
        self.spec.dt
    }
    fn control_set(&self) -> &BoxSet {
        &self.controls
    }
    fn disturbance_set(&self) -> &BoxSet {
        &self.disturbances
    }
    fn state_box(&self) -> &BoxSet {
        &self.states
    }

    fn derivative(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        let v = self.spec.reduced_speed;
        let (s, c) = x[2].sin_cos();
        out[0] = v * c + d[0];
        out[1] = v * s + d[1];
        out[2] = u[0] + d[2];
    }

    fn derivative_jacobians(
        &self,
        x: &[f64],
        _u: &[f64],
        _d: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let v = self.spec.reduced_speed;
        let (s, c) = x[2].sin_cos();
        let mut jx = DMatrix::zeros(3, 3);
        jx[(0, 2)] = -v * s;
        jx[(1, 2)] = v * c;
        let mut ju = DMatrix::zeros(3, 1);
        ju[(2, 0)] = 1.0;
        (jx, ju, DMatrix::identity(3, 3))
    }

    fn margin(&self, x: &[f64]) -> f64 {
        self.track
            .margins(Pose {
                px: x[0],
                py: x[1],
                psi: x[2],
            })
            .g
    }

    fn pose(&self, x: &[f64]) -> Option<Pose> {
        Some(Pose {
            px: x[0],
            py: x[1],
            psi: x[2],
        })
    }

    fn pose_indices(&self) -> Option<[usize; 3]> {
        Some([0, 1, 2])
    }

    fn track(&self) -> Option<&Track> {
        Some(&self.track)
    }
}

/// Uniform sample from the system's state box, rejected while `g(x) <= 0`.
pub fn sample_initial_state<S: System + ?Sized, R: Rng + ?Sized>(
    sys: &S,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let b = sys.state_box();
    let mut x = vec![0.0; sys.state_dim()];
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = if b.hi[i] > b.lo[i] {
                rng.random_range(b.lo[i]..b.hi[i])
            } else {
                b.lo[i]
            };
        }
        if sys.margin(&x) > 0.0 {
            return Ok(x);
        }
    }
    Err(Error::SamplerExhausted {
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}
