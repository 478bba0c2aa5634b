//! Ground truth on small instances: Snell-envelope backward induction on a
//! lattice and brute-force search over adapted switching strategies.
//!
//! Both routes use the same discrete conventions as the PDE solver: payoff
//! accrues as `ψ_i(t_k, x_k)·Δt` over `[t_k, t_{k+1})` in the mode chosen at
//! `t_k`, switching costs are charged at the decision node, nothing is
//! charged at `T`, and the smallest mode index wins ties.

use std::fmt;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::model::{validate_problem, ModelError, SwitchingProblem, ValidationReport};
use crate::sde::MarkovChainLattice;

/// Largest strategy search [`enumerate_strategies`] will attempt.
pub const MAX_STRATEGY_NODES: f64 = 1e7;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("reward shape mismatch at time index {step}: expected {expected} nodes, got {got}")]
    Shape {
        step: usize,
        expected: usize,
        got: usize,
    },
    #[error("problem failed validation; single-sweep projection needs the strict triangle inequality\n{0}")]
    Unvalidated(ValidationReport),
    #[error("start mode {mode} out of range for {modes} modes", mode = .mode + 1)]
    BadMode { mode: usize, modes: usize },
    #[error("strategy search needs about {estimate:.3e} strategy-nodes, above the {MAX_STRATEGY_NODES:e} guard")]
    TooLarge { estimate: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Smallest supermartingale on the lattice dominating `reward`
/// (`reward[k][node]`): `R_N = reward_N`, `R_k = max(reward_k, E[R_{k+1} | node])`.
pub fn snell_value(
    lattice: &MarkovChainLattice,
    reward: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, OracleError> {
    let counts = lattice.node_counts();
    if reward.len() != counts.len() {
        return Err(OracleError::Shape {
            step: reward.len().min(counts.len()),
            expected: counts.len(),
            got: reward.len(),
        });
    }
    for (k, (r, &n)) in reward.iter().zip(&counts).enumerate() {
        if r.len() != n {
            return Err(OracleError::Shape {
                step: k,
                expected: n,
                got: r.len(),
            });
        }
    }
    let last = counts.len() - 1;
    let mut envelope = vec![Vec::new(); counts.len()];
    envelope[last] = reward[last].clone();
    for k in (0..last).rev() {
        let next = &envelope[k + 1];
        envelope[k] = lattice
            .slice(k)
            .transitions
            .iter()
            .zip(&reward[k])
            .map(|(row, &r)| r.max(row.iter().map(|t| t.prob * next[t.to]).sum()))
            .collect();
    }
    Ok(envelope)
}

/// Discrete value processes `Y^1..Y^m` on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeValues {
    /// `values[mode][k][node]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl LatticeValues {
    pub fn mode_count(&self) -> usize {
        self.values.len()
    }

    pub fn slice(&self, mode: usize, k: usize) -> &[f64] {
        &self.values[mode][k]
    }

    pub fn root(&self, mode: usize) -> f64 {
        self.values[mode][0][0]
    }

    /// Smallest `Y_i − max_{j≠i}(−g_ij + Y_j)` over all nodes before `T`.
    pub fn min_obstacle_margin(&self, lattice: &MarkovChainLattice, p: &SwitchingProblem) -> f64 {
        let m = self.mode_count();
        let grid = lattice.grid();
        let mut worst = f64::INFINITY;
        for k in 0..grid.steps() {
            let t = grid.time(k);
            for (n, &x) in lattice.slice(k).states.iter().enumerate() {
                for i in 0..m {
                    let obstacle = (0..m)
                        .filter(|&j| j != i)
                        .map(|j| self.values[j][k][n] - p.cost_at(i, j, t, x))
                        .fold(f64::NEG_INFINITY, f64::max);
                    worst = worst.min(self.values[i][k][n] - obstacle);
                }
            }
        }
        worst
    }

    /// CSV dump with header `mode,k,t,x,value` (modes numbered from 1).
    pub fn write_csv<W: Write>(&self, lattice: &MarkovChainLattice, writer: W) -> Result<(), OracleError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["mode", "k", "t", "x", "value"])?;
        for (i, per_mode) in self.values.iter().enumerate() {
            for (k, slice) in per_mode.iter().enumerate() {
                let t = lattice.grid().time(k);
                for (x, v) in lattice.slice(k).states.iter().zip(slice) {
                    w.write_record([
                        (i + 1).to_string(),
                        k.to_string(),
                        t.to_string(),
                        x.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Backward induction for the switching system on a lattice:
/// `c_i = ψ_i Δt + E[Y_i(k+1) | node]`, `Y_i = max(c_i, max_{j≠i}(c_j − g_ij))`.
pub fn switching_value_dp(
    lattice: &MarkovChainLattice,
    p: &SwitchingProblem,
) -> Result<LatticeValues, OracleError> {
    let (mut lo, mut hi) = lattice.state_range();
    if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let report = validate_problem(p, lo, hi)?;
    if !report.passed {
        return Err(OracleError::Unvalidated(report));
    }
    Ok(backward_induction(lattice, p))
}

fn backward_induction(lattice: &MarkovChainLattice, p: &SwitchingProblem) -> LatticeValues {
    let m = p.mode_count();
    let grid = lattice.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let counts = lattice.node_counts();

    let mut values: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| counts.iter().map(|&n| vec![0.0; n]).collect())
        .collect();

    let mut cont = vec![0.0; m];
    for k in (0..steps).rev() {
        let t = grid.time(k);
        let slice = lattice.slice(k);
        for (n, (&x, row)) in slice.states.iter().zip(&slice.transitions).enumerate() {
            for (i, c) in cont.iter_mut().enumerate() {
                let next = &values[i][k + 1];
                let expectation: f64 = row.iter().map(|tr| tr.prob * next[tr.to]).sum();
                *c = p.payoff_at(i, t, x) * dt + expectation;
            }
            for i in 0..m {
                let mut best = cont[i];
                for j in (0..m).filter(|&j| j != i) {
                    best = best.max(cont[j] - p.cost_at(i, j, t, x));
                }
                values[i][k][n] = best;
            }
        }
    }
    LatticeValues { values }
}

/// A single switch in a searched strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time_index: usize,
    pub t: f64,
    pub x: f64,
    /// Transition choices (row positions) taken from the root to reach this node.
    pub history: Vec<usize>,
    pub from: usize,
    pub to: usize,
}

impl fmt::Display for SwitchEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "switch {}→{} at t={}", self.from + 1, self.to + 1, self.t)?;
        if !self.history.is_empty() {
            write!(f, " (x={})", self.x)?;
        }
        Ok(())
    }
}

/// Every switch the optimal adapted strategy makes, over all reachable histories.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StrategyDescription {
    pub switches: Vec<SwitchEvent>,
}

impl fmt::Display for StrategyDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.switches.is_empty() {
            return f.write_str("never switch");
        }
        let parts: Vec<String> = self.switches.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub best_value: f64,
    pub best_strategy: StrategyDescription,
    /// Upper bound on the search size that the guard was checked against.
    pub strategy_nodes: f64,
}

/// Exhaustive search over every adapted pure strategy with at most
/// `max_switches` switches per path: one mode decision at each reachable
/// lattice node, scored by `E[Σ ψ Δt − Σ g]`. No memoisation: each decision
/// subtree is evaluated on its own, so the cost is exponential in `Nt`.
pub fn enumerate_strategies(
    lattice: &MarkovChainLattice,
    p: &SwitchingProblem,
    start_mode: usize,
    max_switches: usize,
) -> Result<EnumerationResult, OracleError> {
    let m = p.mode_count();
    if start_mode >= m {
        return Err(OracleError::BadMode {
            mode: start_mode,
            modes: m,
        });
    }
    let estimate = search_size(lattice, m);
    if estimate > MAX_STRATEGY_NODES {
        return Err(OracleError::TooLarge { estimate });
    }
    let search = Search::new(lattice, p);
    let best_value = search.value(0, 0, start_mode, max_switches);
    let mut best_strategy = StrategyDescription::default();
    let mut history = Vec::new();
    search.trace(0, 0, start_mode, max_switches, &mut history, &mut best_strategy.switches);
    Ok(EnumerationResult {
        best_value,
        best_strategy,
        strategy_nodes: estimate,
    })
}

/// Number of recursive evaluations the search performs from the root.
fn search_size(lattice: &MarkovChainLattice, modes: usize) -> f64 {
    let steps = lattice.grid().steps();
    let mut calls = vec![1.0; lattice.slice(steps).states.len()];
    for k in (0..steps).rev() {
        calls = lattice
            .slice(k)
            .transitions
            .iter()
            .map(|row| 1.0 + modes as f64 * row.iter().map(|t| calls[t.to]).sum::<f64>())
            .collect();
    }
    calls[0]
}

struct Search<'a> {
    lattice: &'a MarkovChainLattice,
    modes: usize,
    dt: f64,
    /// `payoff[k][node][mode]`
    payoff: Vec<Vec<Vec<f64>>>,
    /// `cost[k][node][from * modes + to]`
    cost: Vec<Vec<Vec<f64>>>,
}

impl<'a> Search<'a> {
    fn new(lattice: &'a MarkovChainLattice, p: &SwitchingProblem) -> Self {
        let m = p.mode_count();
        let grid = lattice.grid();
        let steps = grid.steps();
        let mut payoff = Vec::with_capacity(steps);
        let mut cost = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = grid.time(k);
            let states = &lattice.slice(k).states;
            payoff.push(
                states
                    .iter()
                    .map(|&x| (0..m).map(|i| p.payoff_at(i, t, x)).collect())
                    .collect(),
            );
            cost.push(
                states
                    .iter()
                    .map(|&x| {
                        (0..m * m)
                            .map(|ij| p.cost_at(ij / m, ij % m, t, x))
                            .collect()
                    })
                    .collect(),
            );
        }
        Self {
            lattice,
            modes: m,
            dt: grid.dt(),
            payoff,
            cost,
        }
    }

    /// Value of running decision `mode_next` over `[t_k, t_{k+1})` from `mode`.
    fn option_value(&self, k: usize, node: usize, mode: usize, next: usize, budget: usize) -> f64 {
        let remaining = if next == mode { budget } else { budget - 1 };
        let row = &self.lattice.slice(k).transitions[node];
        let expectation: f64 = row
            .iter()
            .map(|tr| tr.prob * self.value(k + 1, tr.to, next, remaining))
            .sum();
        let c = self.payoff[k][node][next] * self.dt + expectation;
        if next == mode {
            c
        } else {
            c - self.cost[k][node][mode * self.modes + next]
        }
    }

    fn options(&self, mode: usize, budget: usize) -> impl Iterator<Item = usize> {
        (0..self.modes).filter(move |&d| d == mode || budget > 0)
    }

    fn best(&self, k: usize, node: usize, mode: usize, budget: usize) -> (usize, f64) {
        let mut best = (mode, f64::NEG_INFINITY);
        for d in self.options(mode, budget) {
            let v = self.option_value(k, node, mode, d, budget);
            if v > best.1 {
                best = (d, v);
            }
        }
        best
    }

    fn value(&self, k: usize, node: usize, mode: usize, budget: usize) -> f64 {
        if k == self.lattice.grid().steps() {
            return 0.0;
        }
        self.best(k, node, mode, budget).1
    }

    fn trace(
        &self,
        k: usize,
        node: usize,
        mode: usize,
        budget: usize,
        history: &mut Vec<usize>,
        out: &mut Vec<SwitchEvent>,
    ) {
        let grid = self.lattice.grid();
        if k == grid.steps() {
            return;
        }
        let (choice, _) = self.best(k, node, mode, budget);
        let remaining = if choice == mode {
            budget
        } else {
            out.push(SwitchEvent {
                time_index: k,
                t: grid.time(k),
                x: self.lattice.slice(k).states[node],
                history: history.clone(),
                from: mode,
                to: choice,
            });
            budget - 1
        };
        for (branch, tr) in self.lattice.slice(k).transitions[node].iter().enumerate() {
            history.push(branch);
            self.trace(k + 1, tr.to, choice, remaining, history, out);
            history.pop();
        }
    }
}
