//! Finite-difference solver for the system of `m` variational inequalities
//! with interconnected obstacles
//!
//! ```text
//! min{ v_i − max_{j≠i}(v_j − g_ij),  −∂_t v_i − A v_i − ψ_i } = 0,   v_i(T, ·) = 0,
//! A = ½σ²∂²_x + b∂_x,
//! ```
//!
//! on a truncated interval, marching backward from `T`. Each time level takes
//! one linear step per mode (the continuation values) and then projects onto
//! the obstacles. The Picard driver instead solves one single-obstacle
//! stopping problem per mode and iteration, with the obstacle frozen at the
//! previous iterate.
//!
//! Second derivatives are centred, first derivatives upwinded by the sign of
//! the drift. The two boundary rows assume `v_xx = 0` and keep the drift term
//! only when it points into the domain, so no boundary values are invented and
//! the implicit matrix stays an M-matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_problem, ModelError, SwitchingProblem, ValidationReport};
use crate::sde::{SdeError, TimeGrid};

/// Obstacle tolerance after projection.
pub const TOL_OBSTACLE: f64 = 1e-9;
/// Slack for the Picard monotonicity check.
pub const TOL_MONOTONE: f64 = 1e-10;
pub const DEFAULT_PICARD_TOL: f64 = 1e-8;
pub const DEFAULT_PICARD_MAX_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("space grid needs finite x_min < x_max, at least 3 nodes and x_min > 0 in log space (got [{x_min}, {x_max}], {nodes} nodes, log_space = {log_space})")]
    BadSpaceGrid {
        x_min: f64,
        x_max: f64,
        nodes: usize,
        log_space: bool,
    },
    #[error("explicit step violates the stability bound: dt = {dt:e} exceeds {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("singular tridiagonal system at row {row} (pivot {pivot:e})")]
    Singular { row: usize, pivot: f64 },
    #[error("problem is not well posed on the grid domain\n{0}")]
    IllPosed(ValidationReport),
    #[error("non-finite coefficient at t = {t}, x = {x}")]
    NonFinite { t: f64, x: f64 },
    #[error("Picard iterate {iteration} decreased by {drop:e} at mode {mode}, t = {t}, x = {x}", mode = .mode + 1)]
    NonMonotone {
        iteration: usize,
        mode: usize,
        t: f64,
        x: f64,
        drop: f64,
    },
    #[error("{what} did not settle at t = {t}")]
    NoConvergence { what: &'static str, t: f64 },
    #[error("slice has {got} nodes, grid has {expected}")]
    SliceLength { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Explicit,
    /// Backward Euler with tridiagonal solves.
    Implicit,
}

/// Truncated state interval, uniform in `x` or in `log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    nodes: usize,
    log_space: bool,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, nodes: usize, log_space: bool) -> Result<Self, PdeError> {
        let ok = x_min.is_finite()
            && x_max.is_finite()
            && x_min < x_max
            && nodes >= 3
            && (!log_space || x_min > 0.0);
        if !ok {
            return Err(PdeError::BadSpaceGrid {
                x_min,
                x_max,
                nodes,
                log_space,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            nodes,
            log_space,
        })
    }

    /// Interval holding `x0`'s four-standard-deviation envelope over the
    /// horizon, measured with the coefficients frozen at `(0, x0)`. In log
    /// space the envelope is taken in `log x`.
    pub fn envelope(
        p: &SwitchingProblem,
        x0: f64,
        nodes: usize,
        log_space: bool,
    ) -> Result<Self, PdeError> {
        let horizon = p.horizon();
        let b = p.drift().eval(0.0, x0);
        let s = p.volatility().eval(0.0, x0).abs();
        if log_space {
            if !(x0 > 0.0) {
                return Err(PdeError::BadSpaceGrid {
                    x_min: x0,
                    x_max: x0,
                    nodes,
                    log_space,
                });
            }
            let sy = s / x0;
            let by = b / x0 - 0.5 * sy * sy;
            let half = (by.abs() * horizon + 4.0 * sy * horizon.sqrt()).max(1.0);
            let y0 = x0.ln();
            Self::new((y0 - half).exp(), (y0 + half).exp(), nodes, true)
        } else {
            let half = (b.abs() * horizon + 4.0 * s * horizon.sqrt()).max(1.0);
            Self::new(x0 - half, x0 + half, nodes, false)
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn log_space(&self) -> bool {
        self.log_space
    }

    fn to_coordinate(&self, x: f64) -> f64 {
        if self.log_space {
            x.ln()
        } else {
            x
        }
    }

    /// Spacing in the computational coordinate (`x` or `log x`).
    pub fn step(&self) -> f64 {
        (self.to_coordinate(self.x_max) - self.to_coordinate(self.x_min)) / (self.nodes - 1) as f64
    }

    pub fn coordinate(&self, j: usize) -> f64 {
        if j == self.nodes - 1 {
            self.to_coordinate(self.x_max)
        } else {
            self.to_coordinate(self.x_min) + j as f64 * self.step()
        }
    }

    pub fn state(&self, j: usize) -> f64 {
        if j == 0 {
            self.x_min
        } else if j == self.nodes - 1 {
            self.x_max
        } else if self.log_space {
            self.coordinate(j).exp()
        } else {
            self.coordinate(j)
        }
    }

    pub fn states(&self) -> Vec<f64> {
        (0..self.nodes).map(|j| self.state(j)).collect()
    }

    /// Closest node in the computational coordinate; states off the grid
    /// (including `x <= 0` in log space) clamp to the nearest end.
    pub fn nearest_node(&self, x: f64) -> usize {
        if self.log_space && !(x > 0.0) {
            return 0;
        }
        let pos = (self.to_coordinate(x) - self.to_coordinate(self.x_min)) / self.step();
        if !(pos > 0.0) {
            0
        } else {
            (pos.round() as usize).min(self.nodes - 1)
        }
    }

    /// Linear interpolation of `slice` at `x` in the computational coordinate.
    pub fn interpolate(&self, slice: &[f64], x: f64) -> f64 {
        if self.log_space && !(x > 0.0) {
            return slice[0];
        }
        let pos = (self.to_coordinate(x) - self.to_coordinate(self.x_min)) / self.step();
        if !(pos > 0.0) {
            return slice[0];
        }
        let last = self.nodes - 1;
        if pos >= last as f64 {
            return slice[last];
        }
        let j = pos.floor() as usize;
        let w = pos - j as f64;
        slice[j] * (1.0 - w) + slice[j + 1] * w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grids {
    pub time: TimeGrid,
    pub space: SpaceGrid,
}

impl Grids {
    pub fn new(time: TimeGrid, space: SpaceGrid) -> Self {
        Self { time, space }
    }
}

/// Discrete generator at one time level:
/// `(A_h u)_j = lower_j u_{j−1} + center_j u_j + upper_j u_{j+1}`.
#[derive(Debug, Clone)]
struct Stencil {
    lower: Vec<f64>,
    center: Vec<f64>,
    upper: Vec<f64>,
}

impl Stencil {
    fn at(p: &SwitchingProblem, space: &SpaceGrid, t: f64) -> Result<Self, PdeError> {
        let n = space.nodes();
        let h = space.step();
        let mut lower = vec![0.0; n];
        let mut center = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for j in 0..n {
            let x = space.state(j);
            let b = p.drift().eval(t, x);
            let s = p.volatility().eval(t, x);
            let (diffusion, drift) = if space.log_space() {
                let sy = s / x;
                (0.5 * sy * sy, b / x - 0.5 * sy * sy)
            } else {
                (0.5 * s * s, b)
            };
            if !(diffusion.is_finite() && drift.is_finite()) {
                return Err(PdeError::NonFinite { t, x });
            }
            let up_wind = drift.max(0.0) / h;
            let down_wind = (-drift).max(0.0) / h;
            if j == 0 {
                upper[j] = up_wind;
            } else if j == n - 1 {
                lower[j] = down_wind;
            } else {
                let d = diffusion / (h * h);
                lower[j] = d + down_wind;
                upper[j] = d + up_wind;
            }
            center[j] = -(lower[j] + upper[j]);
        }
        Ok(Self {
            lower,
            center,
            upper,
        })
    }

    fn apply(&self, u: &[f64], j: usize) -> f64 {
        let mut acc = self.center[j] * u[j];
        if j > 0 {
            acc += self.lower[j] * u[j - 1];
        }
        if j + 1 < u.len() {
            acc += self.upper[j] * u[j + 1];
        }
        acc
    }

    /// Largest explicit step keeping every diagonal weight non-negative.
    fn explicit_limit(&self) -> f64 {
        let rate = self.center.iter().fold(0.0_f64, |m, c| m.max(-c));
        if rate == 0.0 {
            f64::INFINITY
        } else {
            1.0 / rate
        }
    }
}

/// Thomas algorithm for `lower[j] u_{j−1} + diag[j] u_j + upper[j] u_{j+1} = rhs[j]`.
fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> Result<(), PdeError> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(PdeError::Singular { row: 0, pivot });
    }
    c[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for j in 1..n {
        pivot = diag[j] - lower[j] * c[j - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(PdeError::Singular { row: j, pivot });
        }
        c[j] = upper[j] / pivot;
        rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / pivot;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= c[j] * rhs[j + 1];
    }
    Ok(())
}

/// `I − Δt·A_h` as (lower, diagonal, upper) bands.
fn implicit_matrix(stencil: &Stencil, dt: f64) -> [Vec<f64>; 3] {
    [
        stencil.lower.iter().map(|a| -dt * a).collect(),
        stencil.center.iter().map(|a| 1.0 - dt * a).collect(),
        stencil.upper.iter().map(|a| -dt * a).collect(),
    ]
}

/// Solves `min(M v − rhs, v − obstacle) = 0` for the tridiagonal M-matrix
/// `M = [lower, diag, upper]` by policy iteration. Nodes where `guess` sits
/// on the obstacle start out active.
fn solve_single_obstacle(
    matrix: &[Vec<f64>; 3],
    rhs: &[f64],
    obstacle: &[f64],
    guess: &[f64],
    t: f64,
) -> Result<Vec<f64>, PdeError> {
    let [lower, diag, upper] = matrix;
    let n = rhs.len();
    let mut active: Vec<bool> = (0..n).map(|j| guess[j] <= obstacle[j]).collect();
    for _ in 0..=n + 1 {
        let mut l = lower.clone();
        let mut d = diag.clone();
        let mut u = upper.clone();
        let mut v = rhs.to_vec();
        for j in (0..n).filter(|&j| active[j]) {
            l[j] = 0.0;
            d[j] = 1.0;
            u[j] = 0.0;
            v[j] = obstacle[j];
        }
        solve_tridiagonal(&l, &d, &u, &mut v)?;
        let mut changed = false;
        for j in 0..n {
            let mut row = diag[j] * v[j] - rhs[j];
            if j > 0 {
                row += lower[j] * v[j - 1];
            }
            if j + 1 < n {
                row += upper[j] * v[j + 1];
            }
            let gap = v[j] - obstacle[j];
            // Rounding-level differences keep the current row.
            let slack = 1e-13 * (1.0 + v[j].abs() + rhs[j].abs());
            let want = if active[j] { gap <= row + slack } else { gap < row - slack };
            if want != active[j] {
                active[j] = want;
                changed = true;
            }
        }
        if !changed {
            return Ok(v);
        }
    }
    Err(PdeError::NoConvergence {
        what: "single-obstacle policy iteration",
        t,
    })
}

/// Sweeps over modes before giving up on the coupled level solve.
const MAX_COUPLED_SWEEPS: usize = 1000;

/// Exact implicit time level: all modes solve
/// `min(v_i − max_{l≠i}(v_l − g_il), M v_i − rhs_i) = 0` jointly. Starts from
/// the projected linear step (a lower bound) and sweeps single-obstacle
/// solves over the modes; the sweeps increase monotonically to the solution.
fn coupled_level(
    mut values: Vec<Vec<f64>>,
    rhs: &[Vec<f64>],
    matrix: &[Vec<f64>; 3],
    costs: &[Vec<Vec<f64>>],
    t: f64,
) -> Result<Vec<Vec<f64>>, PdeError> {
    let m = values.len();
    let n = values[0].len();
    project_in_place(&mut values, costs);
    for _ in 0..MAX_COUPLED_SWEEPS {
        let scale = 1.0 + values.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut change = 0.0_f64;
        for i in 0..m {
            let obstacle: Vec<f64> = (0..n)
                .map(|j| {
                    (0..m)
                        .filter(|&l| l != i)
                        .map(|l| values[l][j] - costs[i][l][j])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let next = solve_single_obstacle(matrix, &rhs[i], &obstacle, &values[i], t)?;
            for (a, b) in next.iter().zip(&values[i]) {
                change = change.max((a - b).abs());
            }
            values[i] = next;
        }
        if change <= 1e-14 * scale {
            return Ok(values);
        }
    }
    Err(PdeError::NoConvergence {
        what: "coupled obstacle sweep",
        t,
    })
}

fn advance(
    v_next: &[f64],
    source: &[f64],
    stencil: &Stencil,
    dt: f64,
    scheme: Scheme,
) -> Result<Vec<f64>, PdeError> {
    match scheme {
        Scheme::Explicit => {
            let limit = stencil.explicit_limit();
            if dt > limit * (1.0 + 1e-12) {
                return Err(PdeError::Cfl { dt, limit });
            }
            Ok((0..v_next.len())
                .map(|j| v_next[j] + dt * (stencil.apply(v_next, j) + source[j]))
                .collect())
        }
        Scheme::Implicit => {
            let [lower, diag, upper] = implicit_matrix(stencil, dt);
            let mut rhs: Vec<f64> = v_next.iter().zip(source).map(|(v, s)| v + dt * s).collect();
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
            Ok(rhs)
        }
    }
}

fn payoff_slice(p: &SwitchingProblem, mode: usize, t: f64, states: &[f64]) -> Vec<f64> {
    states.iter().map(|&x| p.payoff_at(mode, t, x)).collect()
}

/// One backward step of `∂_t v + A v + ψ_mode = 0` from `t_{k+1}` to `t_k`,
/// with coefficients and payoff frozen at `t_k`.
pub fn pde_step(
    v_next: &[f64],
    k: usize,
    mode: usize,
    p: &SwitchingProblem,
    grids: &Grids,
    scheme: Scheme,
) -> Result<Vec<f64>, PdeError> {
    let space = &grids.space;
    if v_next.len() != space.nodes() {
        return Err(PdeError::SliceLength {
            expected: space.nodes(),
            got: v_next.len(),
        });
    }
    let t = grids.time.time(k);
    let stencil = Stencil::at(p, space, t)?;
    let source = payoff_slice(p, mode, t, &space.states());
    advance(v_next, &source, &stencil, grids.time.dt(), scheme)
}

/// `cost[i][j][node]` at one time level.
fn cost_table(p: &SwitchingProblem, t: f64, states: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let m = p.mode_count();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| states.iter().map(|&x| p.cost_at(i, j, t, x)).collect())
                .collect()
        })
        .collect()
}

/// `v_i ← max(v_i, max_{j≠i}(v_j − g_ij))`, swept until nothing changes.
/// Under the strict triangle inequality the first sweep is already the fixed
/// point; otherwise later sweeps pick up same-instant chains. Costs are
/// non-negative, so at most `m − 1` sweeps change anything.
fn project_in_place(values: &mut [Vec<f64>], costs: &[Vec<Vec<f64>>]) -> usize {
    let m = values.len();
    let n = values[0].len();
    let mut sweeps = 0;
    for _ in 0..m {
        let prev = values.to_vec();
        let mut changed = false;
        for i in 0..m {
            for node in 0..n {
                let mut best = prev[i][node];
                for j in (0..m).filter(|&j| j != i) {
                    best = best.max(prev[j][node] - costs[i][j][node]);
                }
                if best != prev[i][node] {
                    changed = true;
                }
                values[i][node] = best;
            }
        }
        sweeps += 1;
        if !changed {
            break;
        }
    }
    sweeps
}

/// Projects continuation slices onto the interconnected obstacles at time `t`.
pub fn obstacle_project(
    continuation: &[Vec<f64>],
    t: f64,
    p: &SwitchingProblem,
    space: &SpaceGrid,
) -> Result<Vec<Vec<f64>>, PdeError> {
    for c in continuation {
        if c.len() != space.nodes() {
            return Err(PdeError::SliceLength {
                expected: space.nodes(),
                got: c.len(),
            });
        }
    }
    let costs = cost_table(p, t, &space.states());
    let mut values = continuation.to_vec();
    project_in_place(&mut values, &costs);
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Direct,
    Picard,
    /// Obstacle-free solve (Picard iterate 0 or a bound surface).
    Linear,
}

/// Discretised value functions `v_i(t_k, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    /// `values[(mode * (Nt+1) + k) * Nx + j]`
    values: Vec<f64>,
    modes: usize,
    grids: Grids,
    scheme: Scheme,
    method: SolveMethod,
}

impl ValueSurface {
    fn zeros(modes: usize, grids: Grids, scheme: Scheme, method: SolveMethod) -> Self {
        let len = modes * (grids.time.steps() + 1) * grids.space.nodes();
        Self {
            values: vec![0.0; len],
            modes,
            grids,
            scheme,
            method,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }

    fn offset(&self, mode: usize, k: usize) -> usize {
        (mode * (self.grids.time.steps() + 1) + k) * self.grids.space.nodes()
    }

    pub fn slice(&self, mode: usize, k: usize) -> &[f64] {
        let o = self.offset(mode, k);
        &self.values[o..o + self.grids.space.nodes()]
    }

    fn slice_mut(&mut self, mode: usize, k: usize) -> &mut [f64] {
        let o = self.offset(mode, k);
        let n = self.grids.space.nodes();
        &mut self.values[o..o + n]
    }

    pub fn get(&self, mode: usize, k: usize, j: usize) -> f64 {
        self.values[self.offset(mode, k) + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Interpolated `v_mode(t_k, x)`; for diagnostics, never for decisions.
    pub fn value_at(&self, mode: usize, k: usize, x: f64) -> f64 {
        self.grids.space.interpolate(self.slice(mode, k), x)
    }

    /// Max-norm distance to another surface on the same grids.
    pub fn distance(&self, other: &ValueSurface) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Smallest `v_i − max_{j≠i}(v_j − g_ij)` over nodes before `T`.
    pub fn min_obstacle_margin(&self, p: &SwitchingProblem) -> f64 {
        let states = self.grids.space.states();
        let mut worst = f64::INFINITY;
        for k in 0..self.grids.time.steps() {
            let t = self.grids.time.time(k);
            for i in 0..self.modes {
                for (j, &x) in states.iter().enumerate() {
                    let obstacle = (0..self.modes)
                        .filter(|&l| l != i)
                        .map(|l| self.get(l, k, j) - p.cost_at(i, l, t, x))
                        .fold(f64::NEG_INFINITY, f64::max);
                    worst = worst.min(self.get(i, k, j) - obstacle);
                }
            }
        }
        worst
    }

    /// One mode as CSV with header `mode,t,x,value`, row-major in `(t, x)`.
    pub fn write_mode_csv<W: Write>(&self, mode: usize, writer: W) -> Result<(), PdeError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["mode", "t", "x", "value"])?;
        self.write_mode_rows(&mut w, mode)?;
        w.flush()?;
        Ok(())
    }

    /// All modes in one CSV with header `mode,t,x,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PdeError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["mode", "t", "x", "value"])?;
        for mode in 0..self.modes {
            self.write_mode_rows(&mut w, mode)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_mode_rows<W: Write>(&self, w: &mut csv::Writer<W>, mode: usize) -> Result<(), PdeError> {
        let states = self.grids.space.states();
        let label = (mode + 1).to_string();
        for k in 0..=self.grids.time.steps() {
            let t = self.grids.time.time(k).to_string();
            for (x, v) in states.iter().zip(self.slice(mode, k)) {
                w.write_record([label.as_str(), t.as_str(), &x.to_string(), &v.to_string()])?;
            }
        }
        Ok(())
    }
}

/// How far a surface is from satisfying the discrete variational inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Largest `|R|` at interior nodes where the obstacle does not bind.
    pub max_pde_residual: f64,
    /// Largest `max(0, obstacle − v)` over all nodes before `T`.
    pub max_obstacle_violation: f64,
    /// Largest `|min(v − obstacle, R)|` at interior nodes.
    pub complementarity_defect: f64,
}

/// Residuals on interior space nodes and time levels `k < Nt`, with the
/// discrete PDE residual `R = (v_k − v_{k+1})/Δt − A_h v − ψ_i`, where `A_h`
/// acts on `v_k` (implicit) or `v_{k+1}` (explicit).
pub fn residual_report(surface: &ValueSurface, p: &SwitchingProblem) -> Result<ResidualReport, PdeError> {
    let grids = surface.grids;
    let space = grids.space;
    let states = space.states();
    let dt = grids.time.dt();
    let m = surface.modes;
    let binding_tol = TOL_OBSTACLE * (1.0 + surface.max_norm());
    let mut report = ResidualReport {
        max_pde_residual: 0.0,
        max_obstacle_violation: 0.0,
        complementarity_defect: 0.0,
    };
    for k in 0..grids.time.steps() {
        let t = grids.time.time(k);
        let stencil = Stencil::at(p, &space, t)?;
        for i in 0..m {
            let now = surface.slice(i, k);
            let next = surface.slice(i, k + 1);
            let operand = match surface.scheme {
                Scheme::Implicit => now,
                Scheme::Explicit => next,
            };
            for (j, &x) in states.iter().enumerate() {
                let obstacle = (0..m)
                    .filter(|&l| l != i)
                    .map(|l| surface.get(l, k, j) - p.cost_at(i, l, t, x))
                    .fold(f64::NEG_INFINITY, f64::max);
                let gap = now[j] - obstacle;
                report.max_obstacle_violation = report.max_obstacle_violation.max(-gap);
                if j == 0 || j == space.nodes() - 1 {
                    continue;
                }
                let r = (now[j] - next[j]) / dt - stencil.apply(operand, j) - p.payoff_at(i, t, x);
                if gap > binding_tol {
                    report.max_pde_residual = report.max_pde_residual.max(r.abs());
                }
                report.complementarity_defect = report.complementarity_defect.max(gap.min(r).abs());
            }
        }
    }
    Ok(report)
}

fn require_well_posed(p: &SwitchingProblem, space: &SpaceGrid) -> Result<(), PdeError> {
    let report = validate_problem(p, space.x_min(), space.x_max())?;
    if report.is_well_posed() {
        Ok(())
    } else {
        Err(PdeError::IllPosed(report))
    }
}

/// How the implicit scheme enforces the obstacles at each time level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleHandling {
    /// Solve the discrete complementarity system of the level exactly.
    #[default]
    Coupled,
    /// Linear step, then projection. Cheaper, but next to a moving free
    /// boundary the discrete PDE residual does not vanish under refinement.
    Splitting,
}

/// Direct backward sweep with exact obstacle handling; see [`solve_system_with`].
pub fn solve_system(
    p: &SwitchingProblem,
    grids: &Grids,
    scheme: Scheme,
) -> Result<(ValueSurface, ResidualReport), PdeError> {
    solve_system_with(p, grids, scheme, ObstacleHandling::Coupled)
}

/// Per time level, one linear step per mode followed by the obstacle
/// projection. With the implicit scheme and [`ObstacleHandling::Coupled`]
/// the projected step only seeds an exact solve of the level. The explicit
/// step does not depend on the level being computed, so there projection
/// alone is already exact.
pub fn solve_system_with(
    p: &SwitchingProblem,
    grids: &Grids,
    scheme: Scheme,
    handling: ObstacleHandling,
) -> Result<(ValueSurface, ResidualReport), PdeError> {
    require_well_posed(p, &grids.space)?;
    let m = p.mode_count();
    let states = grids.space.states();
    let dt = grids.time.dt();
    let mut surface = ValueSurface::zeros(m, *grids, scheme, SolveMethod::Direct);

    for k in (0..grids.time.steps()).rev() {
        let t = grids.time.time(k);
        let stencil = Stencil::at(p, &grids.space, t)?;
        let costs = cost_table(p, t, &states);
        let mut level = Vec::with_capacity(m);
        for i in 0..m {
            let source = payoff_slice(p, i, t, &states);
            level.push(advance(surface.slice(i, k + 1), &source, &stencil, dt, scheme)?);
        }
        let level = if scheme == Scheme::Implicit && handling == ObstacleHandling::Coupled {
            let rhs: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    surface
                        .slice(i, k + 1)
                        .iter()
                        .zip(payoff_slice(p, i, t, &states))
                        .map(|(v, s)| v + dt * s)
                        .collect()
                })
                .collect();
            coupled_level(level, &rhs, &implicit_matrix(&stencil, dt), &costs, t)?
        } else {
            project_in_place(&mut level, &costs);
            level
        };
        for (i, slice) in level.into_iter().enumerate() {
            surface.slice_mut(i, k).copy_from_slice(&slice);
        }
    }
    let report = residual_report(&surface, p)?;
    Ok((surface, report))
}

type SourceFn<'a> = dyn Fn(f64, &[f64]) -> Vec<Vec<f64>> + 'a;

/// Obstacle-free backward solve of `∂_t w + A w + source(t, x) = 0`, `w(T) = 0`.
fn linear_solve(
    p: &SwitchingProblem,
    grids: &Grids,
    scheme: Scheme,
    sources: &SourceFn<'_>,
    modes: usize,
) -> Result<ValueSurface, PdeError> {
    let states = grids.space.states();
    let dt = grids.time.dt();
    let mut surface = ValueSurface::zeros(modes, *grids, scheme, SolveMethod::Linear);
    for k in (0..grids.time.steps()).rev() {
        let t = grids.time.time(k);
        let stencil = Stencil::at(p, &grids.space, t)?;
        for (i, source) in sources(t, &states).into_iter().enumerate() {
            let slice = advance(surface.slice(i, k + 1), &source, &stencil, dt, scheme)?;
            surface.slice_mut(i, k).copy_from_slice(&slice);
        }
    }
    Ok(surface)
}

/// Single-mode surface of `E[∫_t^T max_i |ψ_i(s, X_s)| ds]`, the upper
/// bound for every Picard iterate.
pub fn payoff_bound_surface(
    p: &SwitchingProblem,
    grids: &Grids,
    scheme: Scheme,
) -> Result<ValueSurface, PdeError> {
    let m = p.mode_count();
    linear_solve(
        p,
        grids,
        scheme,
        &|t, states| {
            vec![states
                .iter()
                .map(|&x| (0..m).map(|i| p.payoff_at(i, t, x).abs()).fold(0.0, f64::max))
                .collect()]
        },
        1,
    )
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Iterate 0 first.
    pub iterates: Vec<ValueSurface>,
    /// Max-norm gap between consecutive iterates; `gaps[n-1]` compares `n` with `n−1`.
    pub gaps: Vec<f64>,
    pub converged: bool,
}

impl PicardOutcome {
    pub fn last(&self) -> &ValueSurface {
        self.iterates.last().expect("at least iterate 0")
    }

    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }
}

/// Picard scheme: iterate 0 is the obstacle-free value of each mode; iterate
/// `n` solves, for each mode on its own, the stopping problem with obstacle
/// `max_{j≠i}(v^{n−1}_j − g_ij)` (no obstacle at `T`). Stops once the
/// max-norm gap drops below `tol` or after `max_iters` iterations.
pub fn picard_solve(
    p: &SwitchingProblem,
    grids: &Grids,
    scheme: Scheme,
    max_iters: usize,
    tol: f64,
) -> Result<PicardOutcome, PdeError> {
    require_well_posed(p, &grids.space)?;
    let m = p.mode_count();
    let states = grids.space.states();
    let nx = states.len();
    let dt = grids.time.dt();
    let steps = grids.time.steps();

    let iterate0 = linear_solve(
        p,
        grids,
        scheme,
        &|t, states| (0..m).map(|i| payoff_slice(p, i, t, states)).collect(),
        m,
    )?;
    let mut iterates = vec![iterate0];
    let mut gaps = Vec::new();
    let mut converged = false;

    let stencils = (0..steps)
        .map(|k| Stencil::at(p, &grids.space, grids.time.time(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let costs: Vec<_> = (0..steps)
        .map(|k| cost_table(p, grids.time.time(k), &states))
        .collect();

    for n in 1..=max_iters {
        let prev = iterates.last().expect("iterate 0");
        let mut next = ValueSurface::zeros(m, *grids, scheme, SolveMethod::Picard);
        for i in 0..m {
            for k in (0..steps).rev() {
                let t = grids.time.time(k);
                let source = payoff_slice(p, i, t, &states);
                let cont = advance(next.slice(i, k + 1), &source, &stencils[k], dt, scheme)?;
                let obstacle: Vec<f64> = (0..nx)
                    .map(|j| {
                        (0..m)
                            .filter(|&l| l != i)
                            .map(|l| prev.get(l, k, j) - costs[k][i][l][j])
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                let slice = match scheme {
                    Scheme::Explicit => cont.iter().zip(&obstacle).map(|(c, o)| c.max(*o)).collect(),
                    Scheme::Implicit => {
                        let rhs: Vec<f64> = next
                            .slice(i, k + 1)
                            .iter()
                            .zip(&source)
                            .map(|(v, s)| v + dt * s)
                            .collect();
                        let matrix = implicit_matrix(&stencils[k], dt);
                        solve_single_obstacle(&matrix, &rhs, &obstacle, &cont, t)?
                    }
                };
                next.slice_mut(i, k).copy_from_slice(&slice);
            }
        }
        for i in 0..m {
            for k in 0..steps {
                for j in 0..nx {
                    let drop = prev.get(i, k, j) - next.get(i, k, j);
                    if drop > TOL_MONOTONE {
                        return Err(PdeError::NonMonotone {
                            iteration: n,
                            mode: i,
                            t: grids.time.time(k),
                            x: states[j],
                            drop,
                        });
                    }
                }
            }
        }
        let gap = next.distance(prev);
        gaps.push(gap);
        iterates.push(next);
        if gap < tol {
            converged = true;
            break;
        }
    }
    Ok(PicardOutcome {
        iterates,
        gaps,
        converged,
    })
}
