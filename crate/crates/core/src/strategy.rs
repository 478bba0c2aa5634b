//! Switching policy read off a value surface, its Monte Carlo execution, and
//! switch-count statistics.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::SwitchingProblem;
use crate::pde::{Grids, ValueSurface};
use crate::sde::PathEnsemble;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("path grid {paths:?} does not match the policy grid {policy:?}")]
    GridMismatch {
        paths: crate::sde::TimeGrid,
        policy: crate::sde::TimeGrid,
    },
    #[error("start mode {mode} out of range for {modes} modes", mode = .mode + 1)]
    BadMode { mode: usize, modes: usize },
    #[error("policy has {policy} modes, problem has {problem}")]
    ModeCount { policy: usize, problem: usize },
    #[error("need at least {needed} executions, got {got}")]
    TooFewExecutions { needed: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `10⁻⁷·(1 + ‖v‖∞)`.
pub fn default_switch_tolerance(surface: &ValueSurface) -> f64 {
    1e-7 * (1.0 + surface.max_norm())
}

/// Action per `(mode, time index, space node)`: `None` stays, `Some(j)` switches to `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPolicy {
    actions: Vec<Option<usize>>,
    modes: usize,
    grids: Grids,
    switch_tolerance: f64,
}

impl SwitchingPolicy {
    /// Policy from an arbitrary rule `(mode, k, x) -> target`; targets equal
    /// to the running mode mean stay. Nothing switches at `T`.
    pub fn from_fn(
        grids: Grids,
        modes: usize,
        rule: impl Fn(usize, usize, f64) -> Option<usize>,
    ) -> Self {
        let steps = grids.time.steps();
        let states = grids.space.states();
        let mut actions = Vec::with_capacity(modes * (steps + 1) * states.len());
        for i in 0..modes {
            for k in 0..=steps {
                for &x in &states {
                    let a = if k == steps {
                        None
                    } else {
                        rule(i, k, x).filter(|&j| j != i && j < modes)
                    };
                    actions.push(a);
                }
            }
        }
        Self {
            actions,
            modes,
            grids,
            switch_tolerance: 0.0,
        }
    }

    pub fn stay_everywhere(grids: Grids, modes: usize) -> Self {
        Self::from_fn(grids, modes, |_, _, _| None)
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn switch_tolerance(&self) -> f64 {
        self.switch_tolerance
    }

    pub fn action(&self, mode: usize, k: usize, node: usize) -> Option<usize> {
        let nx = self.grids.space.nodes();
        self.actions[(mode * (self.grids.time.steps() + 1) + k) * nx + node]
    }

    /// Number of `(mode, k, node)` cells that switch.
    pub fn switch_region_size(&self) -> usize {
        self.actions.iter().filter(|a| a.is_some()).count()
    }

    /// Cells that switch here also switch in `other`.
    pub fn switch_region_within(&self, other: &SwitchingPolicy) -> bool {
        self.actions
            .iter()
            .zip(&other.actions)
            .all(|(a, b)| a.is_none() || b.is_some())
    }
}

/// Switch where `v_i ≤ max_{l≠i}(v_l − g_il) + switch_tolerance`, towards the
/// maximiser (smallest index on ties). Never at `T`.
pub fn extract_policy(
    surface: &ValueSurface,
    p: &SwitchingProblem,
    switch_tolerance: f64,
) -> SwitchingPolicy {
    let grids = *surface.grids();
    let m = surface.mode_count();
    let steps = grids.time.steps();
    let states = grids.space.states();
    let mut actions = Vec::with_capacity(m * (steps + 1) * states.len());
    for i in 0..m {
        for k in 0..=steps {
            let t = grids.time.time(k);
            for (j, &x) in states.iter().enumerate() {
                if k == steps {
                    actions.push(None);
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for l in (0..m).filter(|&l| l != i) {
                    let v = surface.get(l, k, j) - p.cost_at(i, l, t, x);
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((l, v));
                    }
                }
                let action = best
                    .filter(|&(_, obstacle)| surface.get(i, k, j) <= obstacle + switch_tolerance)
                    .map(|(l, _)| l);
                actions.push(action);
            }
        }
    }
    SwitchingPolicy {
        actions,
        modes: m,
        grids,
        switch_tolerance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutedSwitch {
    pub time_index: usize,
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

/// One realised path of a policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutedStrategy {
    pub start_mode: usize,
    pub switches: Vec<ExecutedSwitch>,
    /// `Σ ψ_{u_k}(t_k, X_k)·Δt`.
    pub payoff_integral: f64,
    /// Payoff integral minus switching costs.
    pub total_profit: f64,
}

/// Walks each path forward under `policy`. Decisions use the nearest space
/// node; payoff and costs use the actual path state. A same-node chain
/// `i→j→…→k` is recorded as one switch `i→k` charged the cheaper of `g_ik`
/// and the chain's summed cost.
pub fn simulate_strategy(
    policy: &SwitchingPolicy,
    paths: &PathEnsemble,
    p: &SwitchingProblem,
    start_mode: usize,
) -> Result<Vec<ExecutedStrategy>, StrategyError> {
    let m = p.mode_count();
    if policy.modes != m {
        return Err(StrategyError::ModeCount {
            policy: policy.modes,
            problem: m,
        });
    }
    if start_mode >= m {
        return Err(StrategyError::BadMode {
            mode: start_mode,
            modes: m,
        });
    }
    let grid = policy.grids.time;
    if *paths.grid() != grid {
        return Err(StrategyError::GridMismatch {
            paths: *paths.grid(),
            policy: grid,
        });
    }
    let dt = grid.dt();
    let space = policy.grids.space;

    let run = |path: &[f64]| {
        let mut mode = start_mode;
        let mut switches = Vec::new();
        let mut payoff = 0.0;
        let mut costs = 0.0;
        for k in 0..grid.steps() {
            let t = grid.time(k);
            let x = path[k];
            let node = space.nearest_node(x);
            let from = mode;
            let mut visited = vec![from];
            let mut chain_cost = 0.0;
            while let Some(next) = policy.action(mode, k, node) {
                if visited.contains(&next) {
                    break;
                }
                chain_cost += p.cost_at(mode, next, t, x);
                visited.push(next);
                mode = next;
            }
            if mode != from {
                let cost = p.cost_at(from, mode, t, x).min(chain_cost);
                costs += cost;
                switches.push(ExecutedSwitch {
                    time_index: k,
                    t,
                    from,
                    to: mode,
                    cost,
                });
            }
            payoff += p.payoff_at(mode, t, x) * dt;
        }
        ExecutedStrategy {
            start_mode,
            switches,
            payoff_integral: payoff,
            total_profit: payoff - costs,
        }
    };

    Ok(paths
        .paths()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|path| run(path))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Sample mean and standard error of the realised profits.
pub fn estimate_value(executions: &[ExecutedStrategy]) -> Result<ValueEstimate, StrategyError> {
    let n = executions.len();
    if n < 2 {
        return Err(StrategyError::TooFewExecutions { needed: 2, got: n });
    }
    let mean = executions.iter().map(|e| e.total_profit).sum::<f64>() / n as f64;
    let var = executions
        .iter()
        .map(|e| (e.total_profit - mean).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(ValueEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
    })
}

/// Empirical `P[τ_n < T]`: the share of paths with at least `n` switches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchTailStats {
    /// `frequencies[n−1]` for `n = 1..=max_count+1`; the last entry is 0.
    pub frequencies: Vec<f64>,
    pub sample_size: usize,
    pub start_mode: usize,
}

impl SwitchTailStats {
    pub fn frequency(&self, n: usize) -> f64 {
        assert!(n >= 1, "switch counts start at 1");
        self.frequencies.get(n - 1).copied().unwrap_or(0.0)
    }

    /// Smallest `n` with frequency below `level`.
    pub fn first_below(&self, level: f64) -> usize {
        (1..).find(|&n| self.frequency(n) < level).expect("tail reaches zero")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), StrategyError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "frequency"])?;
        for (i, f) in self.frequencies.iter().enumerate() {
            w.write_record([(i + 1).to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn switch_count_tail(executions: &[ExecutedStrategy]) -> Result<SwitchTailStats, StrategyError> {
    if executions.is_empty() {
        return Err(StrategyError::TooFewExecutions { needed: 1, got: 0 });
    }
    let max_count = executions.iter().map(|e| e.switches.len()).max().unwrap_or(0);
    let mut at_least = vec![0usize; max_count + 2];
    for e in executions {
        for slot in at_least.iter_mut().take(e.switches.len() + 1) {
            *slot += 1;
        }
    }
    let n = executions.len() as f64;
    Ok(SwitchTailStats {
        frequencies: at_least[1..].iter().map(|&c| c as f64 / n).collect(),
        sample_size: executions.len(),
        start_mode: executions[0].start_mode,
    })
}

/// CSV with header `path_id,switch_time,from,to,cost` (modes from 1).
pub fn write_executions_csv<W: Write>(
    executions: &[ExecutedStrategy],
    writer: W,
) -> Result<(), StrategyError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["path_id", "switch_time", "from", "to", "cost"])?;
    for (i, e) in executions.iter().enumerate() {
        for s in &e.switches {
            w.write_record([
                i.to_string(),
                s.t.to_string(),
                (s.from + 1).to_string(),
                (s.to + 1).to_string(),
                s.cost.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
