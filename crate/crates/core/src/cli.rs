//! Config-driven front end: validate, solve, simulate, report.
//!
//! Configs are TOML. Modes are numbered from 1; costs are keyed `i.j`.
//!
//! ```toml
//! [problem]
//! modes = 2
//! horizon = 1.0
//! loop_floor = 0.5                       # optional, default 1e-6
//! drift = { x = 1.0 }                    # a·x + abs_x·|x| + t·t + const
//! volatility = { x = 1.4142135623730951 }
//!
//! [problem.payoff]
//! 1 = { x = 1.0, t = 0.75, const = 1.0 }
//! 2 = { x = 0.1, t = 1.0, const = -1.0 }
//!
//! [problem.cost]                         # every off-diagonal pair required
//! 1.2 = {}
//! 2.1 = { abs_x = 0.1, t = 0.5, const = 2.0 }
//!
//! [grid]
//! time_steps = 200
//! space_nodes = 401
//! x_min = 0.01                           # optional pair, default from the dynamics
//! x_max = 100.0
//! log_space = true                       # optional, default for x-proportional noise
//!
//! [scheme]                               # optional section
//! kind = "implicit"                      # or "explicit"
//! picard = false
//! tol = 1e-8
//! max_iters = 50
//!
//! [simulation]
//! x0 = 1.0
//! start_mode = 1                         # default 1
//! paths = 20000
//! seed = 7                               # default 0
//! switch_tolerance = 1e-7                # optional, default 1e-7·(1 + ‖v‖)
//! mc_slack = 0.05                        # allowed |MC − PDE| beyond 3 std errors
//!
//! [output]                               # optional section
//! dir = "out"
//! surfaces = true
//! executions = true
//! tail = true
//! paths = false
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_problem, CoefficientFunction, ModelError, SwitchingProblem, ValidationReport,
};
use crate::pde::{
    picard_solve, residual_report, solve_system, Grids, PdeError, ResidualReport, Scheme,
    SpaceGrid, ValueSurface, DEFAULT_PICARD_MAX_ITERS, DEFAULT_PICARD_TOL, TOL_OBSTACLE,
};
use crate::sde::{simulate_paths, SdeError, TimeGrid};
use crate::strategy::{
    default_switch_tolerance, estimate_value, extract_policy, simulate_strategy,
    switch_count_tail, write_executions_csv, StrategyError, SwitchTailStats, ValueEstimate,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_GATE: i32 = 3;

/// Config schema version written into every summary.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefSpec {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub abs_x: f64,
    #[serde(default)]
    pub t: f64,
    #[serde(default, rename = "const")]
    pub constant: f64,
}

impl From<CoefSpec> for CoefficientFunction {
    fn from(c: CoefSpec) -> Self {
        CoefficientFunction::new(c.x, c.abs_x, c.t, c.constant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub modes: usize,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_floor: Option<f64>,
    pub drift: CoefSpec,
    pub volatility: CoefSpec,
    pub payoff: BTreeMap<String, CoefSpec>,
    pub cost: BTreeMap<String, BTreeMap<String, CoefSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub time_steps: usize,
    pub space_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_space: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    #[serde(default = "default_scheme")]
    pub kind: Scheme,
    #[serde(default)]
    pub picard: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_scheme() -> Scheme {
    Scheme::Implicit
}
fn default_tol() -> f64 {
    DEFAULT_PICARD_TOL
}
fn default_max_iters() -> usize {
    DEFAULT_PICARD_MAX_ITERS
}

impl Default for SchemeSpec {
    fn default() -> Self {
        Self {
            kind: default_scheme(),
            picard: false,
            tol: default_tol(),
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub x0: f64,
    #[serde(default = "default_start_mode")]
    pub start_mode: usize,
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_tolerance: Option<f64>,
    #[serde(default = "default_mc_slack")]
    pub mc_slack: f64,
}

fn default_start_mode() -> usize {
    1
}
fn default_mc_slack() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub surfaces: bool,
    #[serde(default = "yes")]
    pub executions: bool,
    #[serde(default = "yes")]
    pub tail: bool,
    #[serde(default)]
    pub paths: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            surfaces: true,
            executions: true,
            tail: true,
            paths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub scheme: SchemeSpec,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn parse_mode(key: &str, modes: usize) -> Option<usize> {
    key.parse::<usize>().ok().filter(|&i| (1..=modes).contains(&i)).map(|i| i - 1)
}

impl RunConfig {
    /// Parses TOML text; `origin` labels error messages.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        config.check().map_err(|message| CliError::Config {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(config)
    }

    fn check(&self) -> Result<(), String> {
        let m = self.problem.modes;
        if m < 2 {
            return Err(format!("problem.modes must be at least 2, got {m}"));
        }
        for key in self.problem.payoff.keys() {
            if parse_mode(key, m).is_none() {
                return Err(format!("problem.payoff.{key}: no such mode (modes are 1..={m})"));
            }
        }
        for i in 1..=m {
            if !self.problem.payoff.contains_key(&i.to_string()) {
                return Err(format!("missing key problem.payoff.{i}"));
            }
        }
        for (from, row) in &self.problem.cost {
            for to in row.keys() {
                match (parse_mode(from, m), parse_mode(to, m)) {
                    (Some(i), Some(j)) if i != j => {}
                    _ => return Err(format!("problem.cost.{from}.{to}: not an off-diagonal mode pair")),
                }
            }
        }
        for i in 1..=m {
            for j in (1..=m).filter(|&j| j != i) {
                let present = self
                    .problem
                    .cost
                    .get(&i.to_string())
                    .is_some_and(|row| row.contains_key(&j.to_string()));
                if !present {
                    return Err(format!("missing key problem.cost.{i}.{j}"));
                }
            }
        }
        if self.grid.x_min.is_some() != self.grid.x_max.is_some() {
            return Err("grid.x_min and grid.x_max must be given together".into());
        }
        let s = self.simulation.start_mode;
        if !(1..=m).contains(&s) {
            return Err(format!("simulation.start_mode {s} out of range 1..={m}"));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<SwitchingProblem, ModelError> {
        let spec = &self.problem;
        let m = spec.modes;
        let payoffs = (1..=m).map(|i| spec.payoff[&i.to_string()].into()).collect();
        let costs = (1..=m)
            .map(|i| {
                (1..=m)
                    .map(|j| {
                        if i == j {
                            CoefficientFunction::ZERO
                        } else {
                            spec.cost[&i.to_string()][&j.to_string()].into()
                        }
                    })
                    .collect()
            })
            .collect();
        SwitchingProblem::affine(
            payoffs,
            costs,
            spec.drift.into(),
            spec.volatility.into(),
            spec.horizon,
            spec.loop_floor,
        )
    }

    /// Time grid over the horizon and the space grid (explicit bounds, or
    /// the default envelope around `x0`).
    pub fn build_grids(&self, p: &SwitchingProblem) -> Result<Grids, CliError> {
        let time = TimeGrid::over_horizon(p, self.grid.time_steps)?;
        let log_space = self
            .grid
            .log_space
            .unwrap_or_else(|| p.has_multiplicative_dynamics());
        let space = match (self.grid.x_min, self.grid.x_max) {
            (Some(lo), Some(hi)) => SpaceGrid::new(lo, hi, self.grid.space_nodes, log_space)?,
            _ => SpaceGrid::envelope(p, self.simulation.x0, self.grid.space_nodes, log_space)?,
        };
        Ok(Grids::new(time, space))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, CliError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_toml(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Solve,
    Simulate,
    Run,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub scheme: Scheme,
    pub picard: bool,
    pub picard_iterations: Option<usize>,
    pub picard_converged: Option<bool>,
    pub time_steps: usize,
    pub space_nodes: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub log_space: bool,
    /// `v_i(0, x0)` for each mode, interpolated on the space grid.
    pub values_at_x0: Vec<f64>,
    pub max_norm: f64,
    pub residuals: ResidualReport,
    pub complementarity_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub estimate: ValueEstimate,
    pub reference: f64,
    pub switch_tolerance: f64,
    pub total_switches: usize,
    pub tail: SwitchTailStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gates {
    pub validation: bool,
    pub residuals: Option<bool>,
    pub picard: Option<bool>,
    pub monte_carlo: Option<bool>,
}

impl Gates {
    fn invariants_hold(&self) -> bool {
        [self.residuals, self.picard, self.monte_carlo]
            .iter()
            .all(|g| g.unwrap_or(true))
    }
}

/// Everything a run reports. Serializes deterministically for a given config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub version: String,
    pub schema: u32,
    pub stage: Stage,
    pub validation: ValidationReport,
    pub solver: Option<SolverSummary>,
    pub simulation: Option<SimulationSummary>,
    pub gates: Gates,
    pub exit_code: i32,
    pub config: RunConfig,
}

/// Wall-clock seconds per phase; kept apart from the summary.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub validate: f64,
    pub solve: Option<f64>,
    pub simulate: Option<f64>,
    pub write: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub timings: Timings,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write<E>(
        &mut self,
        name: &str,
        body: impl FnOnce(BufWriter<File>) -> Result<(), E>,
    ) -> Result<(), CliError>
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        let path = self.dir.join(name);
        let wrap = |source: Box<dyn std::error::Error + Send + Sync>| CliError::Write {
            path: path.clone(),
            source,
        };
        let file = File::create(&path).map_err(|e| wrap(Box::new(e)))?;
        body(BufWriter::new(file)).map_err(|e| wrap(Box::new(e)))?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        self.write(name, |mut w| {
            serde_json::to_writer_pretty(&mut w, value)?;
            use std::io::Write;
            w.write_all(b"\n").map_err(serde_json::Error::io)
        })
    }
}

/// Runs the pipeline up to `stage` and writes the artifacts it produced.
///
/// Problems that break only the strict triangle rule are still solved (the
/// solvers handle same-instant chains) but the run exits with
/// [`EXIT_VALIDATION`]; any other violation stops before solving.
pub fn run(config: &RunConfig, stage: Stage) -> Result<RunOutcome, CliError> {
    let mut timings = Timings::default();
    let clock = Instant::now();
    let p = config.build_problem()?;
    let grids = config.build_grids(&p)?;
    let validation = validate_problem(&p, grids.space.x_min(), grids.space.x_max())?;
    timings.validate = clock.elapsed().as_secs_f64();

    let mut gates = Gates {
        validation: validation.passed,
        residuals: None,
        picard: None,
        monte_carlo: None,
    };
    let mut solver = None;
    let mut simulation = None;
    let mut surface: Option<ValueSurface> = None;
    let mut executions = None;
    let mut paths = None;

    if stage != Stage::Validate && validation.is_well_posed() {
        let clock = Instant::now();
        let scheme = config.scheme.kind;
        let (solved, picard) = if config.scheme.picard {
            let outcome = picard_solve(
                &p,
                &grids,
                scheme,
                config.scheme.max_iters,
                config.scheme.tol,
            )?;
            let summary = (outcome.iterations(), outcome.converged);
            (outcome.iterates.into_iter().last().expect("iterate 0"), Some(summary))
        } else {
            (solve_system(&p, &grids, scheme)?.0, None)
        };
        let residuals = residual_report(&solved, &p)?;
        let norm = solved.max_norm();
        let dx = grids.space.step();
        let complementarity_limit = 10.0 * (grids.time.dt() + dx * dx) * (1.0 + norm);
        gates.residuals = Some(
            residuals.max_obstacle_violation <= TOL_OBSTACLE * (1.0 + norm)
                && residuals.complementarity_defect <= complementarity_limit,
        );
        gates.picard = picard.map(|(_, converged)| converged);
        let x0 = config.simulation.x0;
        solver = Some(SolverSummary {
            scheme,
            picard: config.scheme.picard,
            picard_iterations: picard.map(|(n, _)| n),
            picard_converged: picard.map(|(_, c)| c),
            time_steps: grids.time.steps(),
            space_nodes: grids.space.nodes(),
            x_min: grids.space.x_min(),
            x_max: grids.space.x_max(),
            log_space: grids.space.log_space(),
            values_at_x0: (0..p.mode_count()).map(|i| solved.value_at(i, 0, x0)).collect(),
            max_norm: norm,
            residuals,
            complementarity_limit,
        });
        timings.solve = Some(clock.elapsed().as_secs_f64());

        if matches!(stage, Stage::Simulate | Stage::Run) {
            let clock = Instant::now();
            let sim = &config.simulation;
            let start = sim.start_mode - 1;
            let tolerance = sim
                .switch_tolerance
                .unwrap_or_else(|| default_switch_tolerance(&solved));
            let policy = extract_policy(&solved, &p, tolerance);
            let ensemble = simulate_paths(&p, grids.time, sim.x0, sim.paths, sim.seed)?;
            let runs = simulate_strategy(&policy, &ensemble, &p, start)?;
            let estimate = estimate_value(&runs)?;
            let tail = switch_count_tail(&runs)?;
            let reference = solved.value_at(start, 0, sim.x0);
            gates.monte_carlo = Some(
                (estimate.mean - reference).abs() <= 3.0 * estimate.std_error + sim.mc_slack,
            );
            simulation = Some(SimulationSummary {
                estimate,
                reference,
                switch_tolerance: tolerance,
                total_switches: runs.iter().map(|r| r.switches.len()).sum(),
                tail,
            });
            executions = Some(runs);
            paths = Some(ensemble);
            timings.simulate = Some(clock.elapsed().as_secs_f64());
        }
        surface = Some(solved);
    }

    let exit_code = if !validation.passed {
        EXIT_VALIDATION
    } else if !gates.invariants_hold() {
        EXIT_GATE
    } else {
        EXIT_OK
    };
    let summary = RunSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema: SCHEMA_VERSION,
        stage,
        validation,
        solver,
        simulation,
        gates,
        exit_code,
        config: config.clone(),
    };

    let clock = Instant::now();
    let out = &config.output;
    fs::create_dir_all(&out.dir).map_err(|e| CliError::Write {
        path: out.dir.clone(),
        source: Box::new(e),
    })?;
    let mut writer = Writer {
        dir: &out.dir,
        files: Vec::new(),
    };
    if let Some(surface) = &surface {
        if out.surfaces && matches!(stage, Stage::Solve | Stage::Run) {
            for i in 0..surface.mode_count() {
                writer.write(&format!("mode{}.csv", i + 1), |w| surface.write_mode_csv(i, w))?;
            }
        }
    }
    if let Some(runs) = &executions {
        if out.executions {
            writer.write("executions.csv", |w| write_executions_csv(runs, w))?;
        }
    }
    if let Some(sim) = &summary.simulation {
        if out.tail {
            writer.write("tail.csv", |w| sim.tail.write_csv(w))?;
        }
    }
    if let Some(ensemble) = &paths {
        if out.paths {
            writer.write("paths.csv", |w| ensemble.write_csv(w))?;
        }
    }
    writer.json("summary.json", &summary)?;
    timings.write = Some(clock.elapsed().as_secs_f64());
    writer.json("timings.json", &timings)?;

    Ok(RunOutcome {
        summary,
        timings,
        files: writer.files,
    })
}

#[derive(Debug, Parser)]
#[command(name = "switchflow", version, about = "Optimal multi-mode switching solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Config file (TOML).
    pub config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Random seed, overriding `simulation.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural cost assumptions.
    Validate(CommonArgs),
    /// Validate and solve; writes per-mode surfaces.
    Solve(CommonArgs),
    /// Validate, solve, and simulate the extracted policy.
    Simulate(CommonArgs),
    /// Full pipeline with every artifact.
    Run(CommonArgs),
}

impl Command {
    fn parts(&self) -> (Stage, &CommonArgs) {
        match self {
            Command::Validate(a) => (Stage::Validate, a),
            Command::Solve(a) => (Stage::Solve, a),
            Command::Simulate(a) => (Stage::Simulate, a),
            Command::Run(a) => (Stage::Run, a),
        }
    }
}

fn report(summary: &RunSummary) {
    print!("{}", summary.validation);
    if let Some(s) = &summary.solver {
        for (i, v) in s.values_at_x0.iter().enumerate() {
            println!("v{}(0, x0) = {v}", i + 1);
        }
        let r = &s.residuals;
        println!(
            "residuals: pde {:.3e}, obstacle {:.3e}, complementarity {:.3e} (limit {:.3e})",
            r.max_pde_residual, r.max_obstacle_violation, r.complementarity_defect, s.complementarity_limit
        );
        if let (Some(n), Some(c)) = (s.picard_iterations, s.picard_converged) {
            println!("picard: {n} iterations, converged = {c}");
        }
    }
    if let Some(m) = &summary.simulation {
        println!(
            "monte carlo: {} ± {} (n = {}), reference {}",
            m.estimate.mean, m.estimate.std_error, m.estimate.n, m.reference
        );
        println!("switches: {} in total", m.total_switches);
    }
    println!("exit code {}", summary.exit_code);
}

/// Entry point behind the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let (stage, args) = cli.command.parts();
    let mut config = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    if let Some(dir) = &args.out_dir {
        config.output.dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        config.simulation.seed = seed;
    }
    match run(&config, stage) {
        Ok(outcome) => {
            let code = outcome.exit_code();
            if !args.quiet || code != EXIT_OK {
                report(&outcome.summary);
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
