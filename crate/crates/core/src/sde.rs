//! State dynamics `dX = b(t,X) dt + σ(t,X) dB`: Euler–Maruyama path ensembles
//! and finite Markov-chain lattices for the dynamic-programming oracles.
//!
//! Only the one-dimensional state with a scalar Brownian driver is supported.
//!
//! # Random numbers
//!
//! Path `i` of an ensemble with master seed `s` draws its normals from
//! `ChaCha20Rng::seed_from_u64(s)` switched to stream `i`, sampled with
//! `rand_distr::StandardNormal`. ChaCha is counter-based, so the ensemble is
//! bit-reproducible across platforms and independent of how paths are
//! scheduled over threads, and path `i` does not depend on the path count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::SwitchingProblem;

/// Largest binomial lattice (in time steps) the oracle will build.
pub const MAX_BINOMIAL_STEPS: usize = 25;
/// Cap on the number of nodes in a single lattice slice.
pub const MAX_SLICE_NODES: usize = 1 << 22;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("time grid needs t_start < horizon_end and at least one step (got [{t_start}, {horizon_end}], {steps} steps)")]
    BadTimeGrid {
        t_start: f64,
        horizon_end: f64,
        steps: usize,
    },
    #[error("need at least one path")]
    NoPaths,
    #[error("start state must be finite, got {0}")]
    BadStart(f64),
    #[error("simulation failure: path {path} became non-finite at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("binomial lattices are limited to {MAX_BINOMIAL_STEPS} steps, got {0}")]
    TooManySteps(usize),
    #[error("lattice slice {step} would hold {nodes} nodes (cap {MAX_SLICE_NODES})")]
    TooManyNodes { step: usize, nodes: usize },
    #[error("transition probability {prob} outside [0,1] at step {step}, x = {x}; use a finer time grid")]
    BadProbability { step: usize, x: f64, prob: f64 },
    #[error("trinomial lattice needs non-zero volatility at the root; use a binomial lattice")]
    DegenerateRoot,
    #[error("non-finite coefficient at step {step}, x = {x}")]
    NonFiniteCoefficient { step: usize, x: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Uniform grid on `[t_start, horizon_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_start: f64,
    horizon_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, horizon_end: f64, steps: usize) -> Result<Self, SdeError> {
        if !(t_start.is_finite() && horizon_end.is_finite() && t_start < horizon_end && steps >= 1)
        {
            return Err(SdeError::BadTimeGrid {
                t_start,
                horizon_end,
                steps,
            });
        }
        Ok(Self {
            t_start,
            horizon_end,
            steps,
        })
    }

    /// `[0, T]` with `steps` steps.
    pub fn over_horizon(p: &SwitchingProblem, steps: usize) -> Result<Self, SdeError> {
        Self::new(0.0, p.horizon(), steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn horizon_end(&self) -> f64 {
        self.horizon_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        (self.horizon_end - self.t_start) / self.steps as f64
    }

    /// `t_k`; the last index maps exactly onto `horizon_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    /// Row-major: path `i` occupies `values[i*(Nt+1) .. (i+1)*(Nt+1)]`.
    values: Vec<f64>,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
    start_state: f64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start_state(&self) -> f64 {
        self.start_state
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.grid.steps + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.steps + 1)
    }

    pub fn terminal_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.paths().map(|p| p[p.len() - 1])
    }

    /// CSV dump with header `path_id,t,x`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SdeError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["path_id", "t", "x"])?;
        for (i, path) in self.paths().enumerate() {
            for (k, x) in path.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    self.grid.time(k).to_string(),
                    x.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Generator for path `index` of an ensemble with master seed `seed`.
pub fn path_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Euler–Maruyama ensemble started from `x0` at `grid.t_start()`.
pub fn simulate_paths(
    p: &SwitchingProblem,
    grid: TimeGrid,
    x0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble, SdeError> {
    if n_paths == 0 {
        return Err(SdeError::NoPaths);
    }
    if !x0.is_finite() {
        return Err(SdeError::BadStart(x0));
    }
    let width = grid.steps + 1;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut values = vec![0.0; n_paths * width];

    let failure = values
        .par_chunks_mut(width)
        .enumerate()
        .map(|(i, row)| {
            let mut rng = path_rng(seed, i);
            row[0] = x0;
            for k in 0..grid.steps {
                let t = grid.time(k);
                let x = row[k];
                let xi: f64 = StandardNormal.sample(&mut rng);
                let next = x + p.drift().eval(t, x) * dt + p.volatility().eval(t, x) * sqrt_dt * xi;
                if !next.is_finite() {
                    return Some((i, k + 1));
                }
                row[k + 1] = next;
            }
            None
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .next();

    if let Some((path, step)) = failure {
        return Err(SdeError::NonFinite { path, step });
    }
    Ok(PathEnsemble {
        values,
        n_paths,
        grid,
        seed,
        start_state: x0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeStyle {
    /// Two Euler successors `x + bΔt ± σ√Δt` with probability ½; coinciding
    /// successors are merged, so constant coefficients give a recombining tree.
    Binomial,
    /// Recombining grid `x0 + j·h`, `h = σ(t0, x0)·√(3Δt)`, with one-step
    /// mean and variance matched exactly at every node.
    Trinomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub to: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSlice {
    /// Sorted ascending.
    pub states: Vec<f64>,
    /// One row per state; empty in the terminal slice.
    pub transitions: Vec<Vec<Transition>>,
}

/// Discrete-time, finite-state approximation of the state diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainLattice {
    grid: TimeGrid,
    style: LatticeStyle,
    slices: Vec<LatticeSlice>,
}

impl MarkovChainLattice {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn style(&self) -> LatticeStyle {
        self.style
    }

    pub fn slices(&self) -> &[LatticeSlice] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> &LatticeSlice {
        &self.slices[k]
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.states.len()).collect()
    }

    pub fn state_range(&self) -> (f64, f64) {
        self.slices.iter().flat_map(|s| s.states.iter()).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &x| (lo.min(x), hi.max(x)),
        )
    }

    /// `(Σ p·(x'−x), Σ p·(x'−x)²)` for node `node` of slice `k < Nt`.
    pub fn local_moments(&self, k: usize, node: usize) -> (f64, f64) {
        let x = self.slices[k].states[node];
        let next = &self.slices[k + 1].states;
        self.slices[k].transitions[node]
            .iter()
            .fold((0.0, 0.0), |(m1, m2), tr| {
                let d = next[tr.to] - x;
                (m1 + tr.prob * d, m2 + tr.prob * d * d)
            })
    }

    /// Largest `|Σ p − 1|` over all rows.
    pub fn max_row_defect(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.transitions.iter())
            .map(|row| (row.iter().map(|t| t.prob).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn build_lattice(
    p: &SwitchingProblem,
    grid: TimeGrid,
    x0: f64,
    style: LatticeStyle,
) -> Result<MarkovChainLattice, SdeError> {
    if !x0.is_finite() {
        return Err(SdeError::BadStart(x0));
    }
    let slices = match style {
        LatticeStyle::Binomial => binomial_slices(p, &grid, x0)?,
        LatticeStyle::Trinomial => trinomial_slices(p, &grid, x0)?,
    };
    Ok(MarkovChainLattice {
        grid,
        style,
        slices,
    })
}

fn coefficients(p: &SwitchingProblem, step: usize, t: f64, x: f64) -> Result<(f64, f64), SdeError> {
    let b = p.drift().eval(t, x);
    let s = p.volatility().eval(t, x);
    if b.is_finite() && s.is_finite() {
        Ok((b, s))
    } else {
        Err(SdeError::NonFiniteCoefficient { step, x })
    }
}

fn binomial_slices(
    p: &SwitchingProblem,
    grid: &TimeGrid,
    x0: f64,
) -> Result<Vec<LatticeSlice>, SdeError> {
    if grid.steps > MAX_BINOMIAL_STEPS {
        return Err(SdeError::TooManySteps(grid.steps));
    }
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut slices = Vec::with_capacity(grid.steps + 1);
    let mut states = vec![x0];

    for k in 0..grid.steps {
        let t = grid.time(k);
        // Candidate successors per node: (value, source node, weight).
        let mut candidates = Vec::with_capacity(2 * states.len());
        for (n, &x) in states.iter().enumerate() {
            let (b, s) = coefficients(p, k, t, x)?;
            let mean = x + b * dt;
            let spread = s.abs() * sqrt_dt;
            if spread == 0.0 {
                candidates.push((mean, n, 1.0));
            } else {
                candidates.push((mean - spread, n, 0.5));
                candidates.push((mean + spread, n, 0.5));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Merge successors that coincide up to rounding.
        let mut next: Vec<f64> = Vec::new();
        let mut rows: Vec<Vec<Transition>> = vec![Vec::new(); states.len()];
        for (value, source, prob) in candidates {
            let same = next
                .last()
                .is_some_and(|&v: &f64| (value - v).abs() <= 1e-12 * (1.0 + v.abs()));
            if !same {
                next.push(value);
            }
            let to = next.len() - 1;
            match rows[source].iter_mut().find(|t| t.to == to) {
                Some(t) => t.prob += prob,
                None => rows[source].push(Transition { to, prob }),
            }
        }
        if next.len() > MAX_SLICE_NODES {
            return Err(SdeError::TooManyNodes {
                step: k + 1,
                nodes: next.len(),
            });
        }
        slices.push(LatticeSlice {
            states: std::mem::take(&mut states),
            transitions: rows,
        });
        states = next;
    }
    slices.push(LatticeSlice {
        states,
        transitions: Vec::new(),
    });
    Ok(slices)
}

fn trinomial_slices(
    p: &SwitchingProblem,
    grid: &TimeGrid,
    x0: f64,
) -> Result<Vec<LatticeSlice>, SdeError> {
    let dt = grid.dt();
    let (_, s0) = coefficients(p, 0, grid.time(0), x0)?;
    if s0 == 0.0 {
        return Err(SdeError::DegenerateRoot);
    }
    let h = s0.abs() * (3.0 * dt).sqrt();
    if 2 * grid.steps + 1 > MAX_SLICE_NODES {
        return Err(SdeError::TooManyNodes {
            step: grid.steps,
            nodes: 2 * grid.steps + 1,
        });
    }
    let state = |k: usize, a: usize| x0 + (a as f64 - k as f64) * h;

    let mut slices = Vec::with_capacity(grid.steps + 1);
    for k in 0..grid.steps {
        let t = grid.time(k);
        let count = 2 * k + 1;
        let states: Vec<f64> = (0..count).map(|a| state(k, a)).collect();
        let mut rows = Vec::with_capacity(count);
        for (a, &x) in states.iter().enumerate() {
            let (b, s) = coefficients(p, k, t, x)?;
            let mean = b * dt;
            let second = s * s * dt + mean * mean;
            let up = 0.5 * (second / (h * h) + mean / h);
            let down = 0.5 * (second / (h * h) - mean / h);
            let mid = 1.0 - up - down;
            let mut row = Vec::with_capacity(3);
            for (offset, prob) in [(0, down), (1, mid), (2, up)] {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(SdeError::BadProbability { step: k, x, prob });
                }
                if prob > 0.0 {
                    row.push(Transition {
                        to: a + offset,
                        prob,
                    });
                }
            }
            rows.push(row);
        }
        slices.push(LatticeSlice {
            states,
            transitions: rows,
        });
    }
    let k = grid.steps;
    slices.push(LatticeSlice {
        states: (0..2 * k + 1).map(|a| state(k, a)).collect(),
        transitions: Vec::new(),
    });
    Ok(slices)
}
