//! Dense-grid oracle for the discounted safety game.
//!
//! Values live on a tensor grid and are read back by multilinear
//! interpolation. [`solve`] runs discounted value iteration
//!
//! ```text
//! V(x) = (1 - γ) g(x) + γ max_u min_d min{ g(x), V(f(x, u, d)) }
//! ```
//!
//! over finite action grids, sweeping Gauss–Seidel in place with
//! alternating direction (or Jacobi, in parallel). Single-player mode uses
//! `D_h = {0}`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{BoxSet, System, MAX_DIM};

const MAX_CORNERS: usize = 1 << MAX_DIM;
const FILE_MAGIC: &[u8; 4] = b"GSVF";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameMode {
    SinglePlayer,
    TwoPlayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    /// In-place, alternating direction, single-threaded.
    #[default]
    GaussSeidel,
    /// Two-buffer sweeps, parallel over nodes.
    Jacobi,
}

/// Evenly spaced nodes including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Finite control and disturbance sets for exhaustive max-min.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
}

impl ActionGrid {
    /// Tensor grids with `n_u` points per control axis and `n_d` per
    /// disturbance axis; extremes are always included.
    pub fn tensor(controls: &BoxSet, n_u: usize, disturbances: &BoxSet, n_d: usize) -> Self {
        Self {
            controls: tensor_points(controls, n_u.max(2)),
            disturbances: tensor_points(disturbances, n_d.max(2)),
        }
    }

    /// Default resolution: 5 points per control axis, 3 per disturbance axis.
    pub fn for_system<S: System + ?Sized>(sys: &S, mode: GameMode) -> Self {
        let mut grid = Self::tensor(sys.control_set(), 5, sys.disturbance_set(), 3);
        if mode == GameMode::SinglePlayer {
            grid.disturbances = vec![vec![0.0; sys.disturbance_dim()]];
        }
        grid
    }

    /// Explicit point lists.
    pub fn from_points(controls: Vec<Vec<f64>>, disturbances: Vec<Vec<f64>>) -> Self {
        Self {
            controls,
            disturbances,
        }
    }
}

fn tensor_points(b: &BoxSet, n: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..b.dim())
        .map(|i| {
            if b.hi[i] > b.lo[i] {
                linspace(b.lo[i], b.hi[i], n)
            } else {
                vec![b.lo[i]]
            }
        })
        .collect();
    let mut out = vec![vec![]];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

/// Multilinear interpolation stencil: flat node indices and weights.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    count: usize,
    index: [usize; MAX_CORNERS],
    weight: [f64; MAX_CORNERS],
    clamped: bool,
}

/// Value function on a tensor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValueFunction {
    pub axes: Vec<Vec<f64>>,
    /// Row-major: the first axis varies slowest.
    pub values: Vec<f64>,
    pub gamma: f64,
    pub mode: GameMode,
}

impl GridValueFunction {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>, gamma: f64, mode: GameMode) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::Config(format!("grid needs 1..={MAX_DIM} axes")));
        }
        for a in &axes {
            if a.is_empty() || a.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config("grid axes must be strictly increasing".into()));
            }
        }
        let total: usize = axes.iter().map(Vec::len).product();
        if total != values.len() {
            return Err(Error::Shape {
                expected: total,
                actual: values.len(),
            });
        }
        Ok(Self {
            axes,
            values,
            gamma,
            mode,
        })
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.ndim()];
        for i in (0..self.ndim().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].len();
        }
        strides
    }

    /// Coordinates of node `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ndim()];
        self.node_into(flat, &mut out);
        out
    }

    fn node_into(&self, mut flat: usize, out: &mut [f64]) {
        for i in (0..self.ndim()).rev() {
            let n = self.axes[i].len();
            out[i] = self.axes[i][flat % n];
            flat /= n;
        }
    }

    /// Largest spacing along each axis.
    pub fn max_spacing(&self) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| a.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
            .collect()
    }

    /// Half-cell Lipschitz margin `Σ_i L_i Δ_i / 2`.
    pub fn lipschitz_margin(&self, lipschitz: &[f64]) -> f64 {
        self.max_spacing()
            .iter()
            .zip(lipschitz)
            .map(|(d, l)| 0.5 * d * l)
            .sum()
    }

    fn stencil(&self, x: &[f64]) -> Stencil {
        let n = self.ndim();
        let mut lower = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        let mut clamped = false;
        for i in 0..n {
            let axis = &self.axes[i];
            let m = axis.len();
            let xi = x[i];
            if m == 1 {
                lower[i] = 0;
                frac[i] = 0.0;
                clamped |= xi != axis[0];
                continue;
            }
            if !(xi > axis[0]) {
                clamped |= xi < axis[0] || xi.is_nan();
                lower[i] = 0;
                frac[i] = 0.0;
            } else if xi >= axis[m - 1] {
                clamped |= xi > axis[m - 1];
                lower[i] = m - 2;
                frac[i] = 1.0;
            } else {
                // Uniform fast path with a binary-search fallback.
                let h = (axis[m - 1] - axis[0]) / (m - 1) as f64;
                let mut k = (((xi - axis[0]) / h) as usize).min(m - 2);
                if !(axis[k] <= xi && xi <= axis[k + 1]) {
                    k = axis.partition_point(|&a| a <= xi).saturating_sub(1).min(m - 2);
                }
                lower[i] = k;
                frac[i] = (xi - axis[k]) / (axis[k + 1] - axis[k]);
            }
        }
        let strides = self.strides();
        let count = 1usize << n;
        let mut st = Stencil {
            count,
            index: [0; MAX_CORNERS],
            weight: [0.0; MAX_CORNERS],
            clamped,
        };
        for c in 0..count {
            let mut idx = 0;
            let mut w = 1.0;
            for i in 0..n {
                let hi = (c >> (n - 1 - i)) & 1 == 1;
                let k = if hi && self.axes[i].len() > 1 {
                    lower[i] + 1
                } else {
                    lower[i]
                };
                idx += k * strides[i];
                w *= if hi { frac[i] } else { 1.0 - frac[i] };
            }
            st.index[c] = idx;
            st.weight[c] = w;
        }
        st
    }

    /// Multilinear interpolation; the flag reports that `x` was clamped
    /// into the grid's bounding box.
    pub fn interpolate_flagged(&self, x: &[f64]) -> (f64, bool) {
        let st = self.stencil(x);
        (eval_stencil(&st, &self.values), st.clamped)
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.interpolate_flagged(x).0
    }

    /// Node coordinates in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.values.len());
        buf.extend_from_slice(FILE_MAGIC);
        buf.extend_from_slice(&FILE_VERSION.to_le_bytes());
        buf.push(match self.mode {
            GameMode::SinglePlayer => 0,
            GameMode::TwoPlayer => 1,
        });
        buf.extend_from_slice(&self.gamma.to_le_bytes());
        buf.extend_from_slice(&(self.ndim() as u32).to_le_bytes());
        for axis in &self.axes {
            buf.extend_from_slice(&(axis.len() as u32).to_le_bytes());
            for a in axis {
                buf.extend_from_slice(&a.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader {
            bytes: &bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != FILE_MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != FILE_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let mode = match r.take(1)?[0] {
            0 => GameMode::SinglePlayer,
            1 => GameMode::TwoPlayer,
            m => return Err(Error::format(path, format!("unknown mode byte {m}"))),
        };
        let gamma = r.f64()?;
        let ndim = r.u32()? as usize;
        if ndim == 0 || ndim > MAX_DIM {
            return Err(Error::format(path, format!("bad dimension count {ndim}")));
        }
        let mut axes = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let n = r.u32()? as usize;
            let axis = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            axes.push(axis);
        }
        let count = r.u64()? as usize;
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes"));
        }
        Self::new(axes, values, gamma, mode).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn eval_stencil(st: &Stencil, values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 0..st.count {
        let w = st.weight[c];
        if w != 0.0 {
            acc += w * values[st.index[c]];
        }
    }
    acc
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Provenance sidecar written next to a saved grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub env_hash: String,
    pub gamma: f64,
    pub mode: GameMode,
    pub shape: Vec<usize>,
    pub d_max: f64,
}

impl GridSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Settings for [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub gamma: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub mode: GameMode,
    pub order: SweepOrder,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            tol: 1e-6,
            max_sweeps: 10_000,
            mode: GameMode::TwoPlayer,
            order: SweepOrder::GaussSeidel,
        }
    }
}

/// Solved grid plus the per-sweep sup-norm residuals.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub value: GridValueFunction,
    pub residuals: Vec<f64>,
}

/// Discounted two-player minimax backup at state `x`, reading `V` by interpolation.
pub fn game_backup<S: System + ?Sized>(
    v: &GridValueFunction,
    x: &[f64],
    sys: &S,
    gamma: f64,
    actions: &ActionGrid,
) -> f64 {
    let g = sys.margin(x);
    backup_with_margin(&v.values, v, x, g, sys, gamma, actions)
}

fn backup_with_margin<S: System + ?Sized>(
    values: &[f64],
    grid: &GridValueFunction,
    x: &[f64],
    g: f64,
    sys: &S,
    gamma: f64,
    actions: &ActionGrid,
) -> f64 {
    let n = sys.state_dim();
    let mut next = [0.0; MAX_DIM];
    let mut best = f64::NEG_INFINITY;
    for u in &actions.controls {
        let mut worst = f64::INFINITY;
        for d in &actions.disturbances {
            sys.step(x, u, d, &mut next[..n]);
            let st = grid.stencil(&next[..n]);
            worst = worst.min(eval_stencil(&st, values));
            if worst <= best {
                // This control can no longer beat the incumbent.
                break;
            }
        }
        best = best.max(worst);
    }
    (1.0 - gamma) * g + gamma * g.min(best)
}

/// Value function initialized to the safety margin at every node.
pub fn margin_grid<S: System + ?Sized>(
    sys: &S,
    axes: Vec<Vec<f64>>,
    gamma: f64,
    mode: GameMode,
) -> Result<GridValueFunction> {
    let total: usize = axes.iter().map(Vec::len).product();
    let mut grid = GridValueFunction::new(axes, vec![0.0; total], gamma, mode)?;
    let mut x = [0.0; MAX_DIM];
    let n = grid.ndim();
    for i in 0..total {
        grid.node_into(i, &mut x[..n]);
        grid.values[i] = sys.margin(&x[..n]);
    }
    Ok(grid)
}

/// Solves the discounted game to sup-norm tolerance.
pub fn solve<S: System + ?Sized>(
    sys: &S,
    axes: Vec<Vec<f64>>,
    actions: &ActionGrid,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let init = margin_grid(sys, axes, opts.gamma, opts.mode)?;
    solve_from(sys, init, actions, opts)
}

/// Value iteration started from an arbitrary initial value array.
pub fn solve_from<S: System + ?Sized>(
    sys: &S,
    mut grid: GridValueFunction,
    actions: &ActionGrid,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    if !(opts.gamma > 0.0 && opts.gamma < 1.0) {
        return Err(Error::Config("gamma must lie in (0, 1)".into()));
    }
    if grid.ndim() != sys.state_dim() {
        return Err(Error::Shape {
            expected: sys.state_dim(),
            actual: grid.ndim(),
        });
    }
    grid.gamma = opts.gamma;
    grid.mode = opts.mode;
    let n = grid.ndim();
    let total = grid.len();
    let margins: Vec<f64> = (0..total)
        .map(|i| {
            let mut x = [0.0; MAX_DIM];
            grid.node_into(i, &mut x[..n]);
            sys.margin(&x[..n])
        })
        .collect();

    let mut residuals = Vec::new();
    for sweep in 0..opts.max_sweeps {
        let residual = match opts.order {
            SweepOrder::GaussSeidel => {
                let mut residual: f64 = 0.0;
                let forward = sweep % 2 == 0;
                for k in 0..total {
                    let i = if forward { k } else { total - 1 - k };
                    let mut x = [0.0; MAX_DIM];
                    grid.node_into(i, &mut x[..n]);
                    let new = backup_with_margin(
                        &grid.values,
                        &grid,
                        &x[..n],
                        margins[i],
                        sys,
                        opts.gamma,
                        actions,
                    );
                    residual = residual.max((new - grid.values[i]).abs());
                    grid.values[i] = new;
                }
                residual
            }
            SweepOrder::Jacobi => {
                let new: Vec<f64> = (0..total)
                    .into_par_iter()
                    .map(|i| {
                        let mut x = [0.0; MAX_DIM];
                        grid.node_into(i, &mut x[..n]);
                        backup_with_margin(
                            &grid.values,
                            &grid,
                            &x[..n],
                            margins[i],
                            sys,
                            opts.gamma,
                            actions,
                        )
                    })
                    .collect();
                let residual = new
                    .iter()
                    .zip(&grid.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                grid.values = new;
                residual
            }
        };
        residuals.push(residual);
        if residual < opts.tol {
            return Ok(SolveReport {
                value: grid,
                residuals,
            });
        }
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Optimal control at `x`: argmax over `U_h` of the worst-case successor
/// value, lowest index on ties. Returns the control and its guaranteed
/// successor value.
pub fn optimal_control<S: System + ?Sized>(
    v: &GridValueFunction,
    sys: &S,
    x: &[f64],
    actions: &ActionGrid,
) -> (Vec<f64>, f64) {
    let n = sys.state_dim();
    let mut next = [0.0; MAX_DIM];
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (ui, u) in actions.controls.iter().enumerate() {
        let mut worst = f64::INFINITY;
        for d in &actions.disturbances {
            sys.step(x, u, d, &mut next[..n]);
            worst = worst.min(v.interpolate(&next[..n]));
            if worst <= best {
                break;
            }
        }
        if worst > best {
            best = worst;
            best_idx = ui;
        }
    }
    (actions.controls[best_idx].clone(), best)
}

/// Worst-case disturbance against control `u`: argmin over `D_h` of the
/// successor value, lowest index on ties.
pub fn optimal_disturbance<S: System + ?Sized>(
    v: &GridValueFunction,
    sys: &S,
    x: &[f64],
    u: &[f64],
    actions: &ActionGrid,
) -> Vec<f64> {
    let n = sys.state_dim();
    let mut next = [0.0; MAX_DIM];
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (di, d) in actions.disturbances.iter().enumerate() {
        sys.step(x, u, d, &mut next[..n]);
        let val = v.interpolate(&next[..n]);
        if val < best {
            best = val;
            best_idx = di;
        }
    }
    actions.disturbances[best_idx].clone()
}

/// Confusion counts of a binary safety predictor against the oracle sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_safe: usize,
    pub true_unsafe: usize,
    /// Predictor says safe, oracle says unsafe.
    pub false_safe: usize,
    /// Predictor says unsafe, oracle says safe.
    pub false_unsafe: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_safe + self.true_unsafe + self.false_safe + self.false_unsafe
    }

    /// False-safe cells as a fraction of all evaluated cells.
    pub fn false_safe_rate(&self) -> f64 {
        ratio(self.false_safe, self.total())
    }

    /// False-unsafe cells as a fraction of all evaluated cells.
    pub fn false_unsafe_rate(&self) -> f64 {
        ratio(self.false_unsafe, self.total())
    }

    pub fn oracle_safe_fraction(&self) -> f64 {
        ratio(self.true_safe + self.false_unsafe, self.total())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Compares `predictor(x) == safe` against `V_oracle(x) >= 0` on the given
/// node indices.
pub fn confusion_eval<F>(oracle: &GridValueFunction, predictor: F, cells: &[usize]) -> ConfusionCounts
where
    F: Fn(&[f64]) -> bool,
{
    let mut counts = ConfusionCounts::default();
    for &i in cells {
        let x = oracle.node(i);
        let truth = oracle.values[i] >= 0.0;
        match (predictor(&x), truth) {
            (true, true) => counts.true_safe += 1,
            (false, false) => counts.true_unsafe += 1,
            (true, false) => counts.false_safe += 1,
            (false, true) => counts.false_unsafe += 1,
        }
    }
    counts
}

/// Default axes for the reduced car: 101 × 25 × 51 over the evaluation box.
pub fn reduced_car_axes(states: &BoxSet) -> Vec<Vec<f64>> {
    reduced_car_axes_with(states, [101, 25, 51])
}

pub fn reduced_car_axes_with(states: &BoxSet, shape: [usize; 3]) -> Vec<Vec<f64>> {
    (0..3)
        .map(|i| linspace(states.lo[i], states.hi[i], shape[i]))
        .collect()
}
