//! Problem definition for the multi-mode switching problem and the structural
//! checks on its switching costs.
//!
//! Modes are indexed from zero in the API. Human-facing output (CSV, reports,
//! the CLI) numbers them from one.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

/// Default no-free-loop floor used when a problem does not supply one.
pub const DEFAULT_LOOP_FLOOR: f64 = 1e-6;

/// Nodes per axis used when validation has to sample opaque evaluators.
pub const DEFAULT_SAMPLE_NODES: usize = 101;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("a switching problem needs at least two modes, got {0}")]
    TooFewModes(usize),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("loop floor must be positive and finite, got {0}")]
    BadLoopFloor(f64),
    #[error("expected {expected} {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("diagonal cost g[{mode}][{mode}] must be identically zero", mode = .0 + 1)]
    NonZeroDiagonal(usize),
    #[error("{0} has a non-finite coefficient")]
    NonFinite(&'static str),
    #[error("malformed domain: x_min = {x_min} must be finite and below x_max = {x_max}")]
    MalformedDomain { x_min: f64, x_max: f64 },
}

/// `f(t, x) = x_coef·x + abs_x_coef·|x| + t_coef·t + const_term`.
///
/// This family covers every payoff rate, switching cost and diffusion
/// coefficient of the worked examples exactly, and it is affine in `t` and
/// affine in `x` on each half-line, which is what makes corner checks in
/// [`validate_problem`] conclusive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CoefficientFunction {
    pub x_coef: f64,
    pub abs_x_coef: f64,
    pub t_coef: f64,
    pub const_term: f64,
}

impl CoefficientFunction {
    pub const ZERO: CoefficientFunction = CoefficientFunction {
        x_coef: 0.0,
        abs_x_coef: 0.0,
        t_coef: 0.0,
        const_term: 0.0,
    };

    pub fn new(x_coef: f64, abs_x_coef: f64, t_coef: f64, const_term: f64) -> Self {
        Self {
            x_coef,
            abs_x_coef,
            t_coef,
            const_term,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(0.0, 0.0, 0.0, c)
    }

    /// `f(t, x) = a·x`.
    pub fn linear(a: f64) -> Self {
        Self::new(a, 0.0, 0.0, 0.0)
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.x_coef * x + self.abs_x_coef * x.abs() + self.t_coef * t + self.const_term
    }

    pub fn is_finite(&self) -> bool {
        self.x_coef.is_finite()
            && self.abs_x_coef.is_finite()
            && self.t_coef.is_finite()
            && self.const_term.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// For `x > 0`, returns `k` such that `f(t, x) = k·x`, if one exists.
    pub fn positive_multiple_of_x(&self) -> Option<f64> {
        (self.t_coef == 0.0 && self.const_term == 0.0).then_some(self.x_coef + self.abs_x_coef)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            const_term: self.const_term + c,
            ..*self
        }
    }
}

/// Evaluates a coefficient function at `(t, x)`.
pub fn eval_coef(f: &CoefficientFunction, t: f64, x: f64) -> f64 {
    f.eval(t, x)
}

/// Opaque `(t, x)` evaluator for users who need functions outside the affine family.
pub type Evaluator = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A `(t, x)` function: either a parametric affine form or an opaque closure.
#[derive(Clone)]
pub enum Coefficient {
    Affine(CoefficientFunction),
    Custom(Evaluator),
}

impl Coefficient {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coefficient::Affine(f) => f.eval(t, x),
            Coefficient::Custom(f) => f(t, x),
        }
    }

    pub fn as_affine(&self) -> Option<&CoefficientFunction> {
        match self {
            Coefficient::Affine(f) => Some(f),
            Coefficient::Custom(_) => None,
        }
    }

    fn shifted(&self, c: f64) -> Self {
        match self {
            Coefficient::Affine(f) => Coefficient::Affine(f.shifted(c)),
            Coefficient::Custom(f) => {
                let f = Arc::clone(f);
                Coefficient::custom(move |t, x| f(t, x) + c)
            }
        }
    }
}

impl From<CoefficientFunction> for Coefficient {
    fn from(f: CoefficientFunction) -> Self {
        Coefficient::Affine(f)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Affine(c) => c.fmt(f),
            Coefficient::Custom(_) => f.write_str("Custom(<evaluator>)"),
        }
    }
}

/// The continuous-time switching problem with a one-dimensional state.
#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    payoffs: Vec<Coefficient>,
    costs: Vec<Vec<Coefficient>>,
    drift: Coefficient,
    volatility: Coefficient,
    horizon: f64,
    loop_floor: f64,
}

impl SwitchingProblem {
    /// Builds a problem, checking the construction invariants. Structural
    /// assumptions on costs are left to [`validate_problem`].
    pub fn new(
        payoffs: Vec<Coefficient>,
        costs: Vec<Vec<Coefficient>>,
        drift: Coefficient,
        volatility: Coefficient,
        horizon: f64,
        loop_floor: Option<f64>,
    ) -> Result<Self, ModelError> {
        let m = payoffs.len();
        if m < 2 {
            return Err(ModelError::TooFewModes(m));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::BadHorizon(horizon));
        }
        let loop_floor = loop_floor.unwrap_or(DEFAULT_LOOP_FLOOR);
        if !(loop_floor.is_finite() && loop_floor > 0.0) {
            return Err(ModelError::BadLoopFloor(loop_floor));
        }
        if costs.len() != m {
            return Err(ModelError::Shape {
                what: "cost rows",
                expected: m,
                got: costs.len(),
            });
        }
        for row in &costs {
            if row.len() != m {
                return Err(ModelError::Shape {
                    what: "cost columns",
                    expected: m,
                    got: row.len(),
                });
            }
        }
        for (i, row) in costs.iter().enumerate() {
            if let Some(f) = row[i].as_affine() {
                if !f.is_zero() {
                    return Err(ModelError::NonZeroDiagonal(i));
                }
            }
        }
        let finite = |c: &Coefficient| c.as_affine().is_none_or(|f| f.is_finite());
        if !payoffs.iter().all(finite) {
            return Err(ModelError::NonFinite("a payoff rate"));
        }
        if !costs.iter().flatten().all(finite) {
            return Err(ModelError::NonFinite("a switching cost"));
        }
        if !finite(&drift) {
            return Err(ModelError::NonFinite("the drift"));
        }
        if !finite(&volatility) {
            return Err(ModelError::NonFinite("the volatility"));
        }
        Ok(Self {
            payoffs,
            costs,
            drift,
            volatility,
            horizon,
            loop_floor,
        })
    }

    /// Convenience constructor for the affine family.
    pub fn affine(
        payoffs: Vec<CoefficientFunction>,
        costs: Vec<Vec<CoefficientFunction>>,
        drift: CoefficientFunction,
        volatility: CoefficientFunction,
        horizon: f64,
        loop_floor: Option<f64>,
    ) -> Result<Self, ModelError> {
        Self::new(
            payoffs.into_iter().map(Into::into).collect(),
            costs
                .into_iter()
                .map(|row| row.into_iter().map(Into::into).collect())
                .collect(),
            drift.into(),
            volatility.into(),
            horizon,
            loop_floor,
        )
    }

    pub fn mode_count(&self) -> usize {
        self.payoffs.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn loop_floor(&self) -> f64 {
        self.loop_floor
    }

    pub fn payoff(&self, mode: usize) -> &Coefficient {
        &self.payoffs[mode]
    }

    pub fn cost(&self, from: usize, to: usize) -> &Coefficient {
        &self.costs[from][to]
    }

    pub fn drift(&self) -> &Coefficient {
        &self.drift
    }

    pub fn volatility(&self) -> &Coefficient {
        &self.volatility
    }

    #[inline]
    pub fn payoff_at(&self, mode: usize, t: f64, x: f64) -> f64 {
        self.payoffs[mode].eval(t, x)
    }

    /// `g_ij(t, x)`; the diagonal is zero by construction.
    #[inline]
    pub fn cost_at(&self, from: usize, to: usize, t: f64, x: f64) -> f64 {
        if from == to {
            0.0
        } else {
            self.costs[from][to].eval(t, x)
        }
    }

    /// True when every cost function is in the affine family.
    pub fn costs_are_affine(&self) -> bool {
        self.costs.iter().flatten().all(|c| c.as_affine().is_some())
    }

    /// Drift and volatility are both `k·x` on `x > 0`, i.e. multiplicative dynamics.
    pub fn has_multiplicative_dynamics(&self) -> bool {
        let pure = |c: &Coefficient| {
            c.as_affine()
                .and_then(|f| f.positive_multiple_of_x())
                .is_some()
        };
        pure(&self.drift) && pure(&self.volatility)
    }

    /// Same problem with `c` added to every payoff rate.
    pub fn with_payoff_shift(&self, c: f64) -> Self {
        Self {
            payoffs: self.payoffs.iter().map(|p| p.shifted(c)).collect(),
            ..self.clone()
        }
    }

    /// Relabels modes: mode `i` of the result is mode `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, ModelError> {
        let m = self.mode_count();
        let mut seen = vec![false; m];
        if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true))
        {
            return Err(ModelError::Shape {
                what: "entries in a mode permutation",
                expected: m,
                got: perm.len(),
            });
        }
        Ok(Self {
            payoffs: perm.iter().map(|&p| self.payoffs[p].clone()).collect(),
            costs: perm
                .iter()
                .map(|&a| perm.iter().map(|&b| self.costs[a][b].clone()).collect())
                .collect(),
            ..self.clone()
        })
    }
}

/// Which structural assumption a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// `g_ii ≡ 0`.
    ZeroDiagonal,
    /// `g_ij ≥ 0`.
    NonNegativeCost,
    /// `g_ij + g_jk > g_ik` for distinct `i, j, k`.
    StrictTriangle,
    /// `g_ij + g_ji > α`.
    LoopFloor,
}

impl Rule {
    pub fn id(&self) -> &'static str {
        match self {
            Rule::ZeroDiagonal => "zero-diagonal",
            Rule::NonNegativeCost => "nonnegative-cost",
            Rule::StrictTriangle => "strict-triangle",
            Rule::LoopFloor => "loop-floor",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    /// Zero-based mode indices the rule was checked on.
    pub modes: Vec<usize>,
    /// Worst sample point.
    pub t: f64,
    pub x: f64,
    /// Value of the checked expression minus its bound; violated when `<= 0`
    /// (strict rules) or `< 0` (non-negativity).
    pub margin: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let modes: Vec<String> = self.modes.iter().map(|m| (m + 1).to_string()).collect();
        write!(
            f,
            "rule {} violated for modes ({}) at (t={}, x={}) with margin {:e}",
            self.rule,
            modes.join(","),
            self.t,
            self.x,
            self.margin
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    /// `false` when opaque evaluators forced grid sampling instead of corner checks.
    pub certified: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// No violations apart from the strict triangle rule. The solvers need
    /// only these: without the triangle rule same-instant chains can pay off,
    /// which the fixed-point obstacle projection accounts for.
    pub fn is_well_posed(&self) -> bool {
        self.violations
            .iter()
            .all(|v| v.rule == Rule::StrictTriangle)
    }

    pub fn violated_rules(&self) -> Vec<Rule> {
        let mut rules: Vec<Rule> = self.violations.iter().map(|v| v.rule).collect();
        rules.sort();
        rules.dedup();
        rules
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "passed" } else { "FAILED" };
        let basis = if self.certified {
            "certified"
        } else {
            "sampled, not certified"
        };
        writeln!(f, "validation {verdict} ({basis})")?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Knobs for [`validate_problem_with`].
#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Strict rules require `margin > strict_slack` at sampled points.
    pub strict_slack: f64,
    pub sample_nodes: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            strict_slack: 0.0,
            sample_nodes: DEFAULT_SAMPLE_NODES,
        }
    }
}

/// Checks the structural cost assumptions on `[0, T] × [x_min, x_max]`.
pub fn validate_problem(
    p: &SwitchingProblem,
    x_min: f64,
    x_max: f64,
) -> Result<ValidationReport, ModelError> {
    validate_problem_with(p, x_min, x_max, ValidationOptions::default())
}

pub fn validate_problem_with(
    p: &SwitchingProblem,
    x_min: f64,
    x_max: f64,
    opts: ValidationOptions,
) -> Result<ValidationReport, ModelError> {
    if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
        return Err(ModelError::MalformedDomain { x_min, x_max });
    }
    let certified = p.costs_are_affine();
    let horizon = p.horizon();
    let points: Vec<(f64, f64)> = if certified {
        // Each rule is affine in t and affine in x on either side of 0.
        let mut xs = vec![x_min, x_max];
        if x_min < 0.0 && 0.0 < x_max {
            xs.push(0.0);
        }
        [0.0, horizon]
            .iter()
            .flat_map(|&t| xs.iter().map(move |&x| (t, x)))
            .collect()
    } else {
        let n = opts.sample_nodes.max(2);
        let step = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (step(0.0, horizon, a), step(x_min, x_max, b))))
            .collect()
    };
    let slack = if certified { 0.0 } else { opts.strict_slack };

    let m = p.mode_count();
    let mut violations = Vec::new();

    // Worst point of an expression over the sample set.
    let worst = |expr: &dyn Fn(f64, f64) -> f64| -> (f64, f64, f64) {
        points
            .iter()
            .map(|&(t, x)| (expr(t, x), t, x))
            .fold((f64::INFINITY, 0.0, 0.0), |acc, cur| {
                if cur.0 < acc.0 {
                    cur
                } else {
                    acc
                }
            })
    };

    for i in 0..m {
        let diag = p.cost(i, i);
        let ok = match diag.as_affine() {
            Some(f) => f.is_zero(),
            None => points.iter().all(|&(t, x)| diag.eval(t, x) == 0.0),
        };
        if !ok {
            let (_, t, x) = worst(&|t, x| -diag.eval(t, x).abs());
            violations.push(Violation {
                rule: Rule::ZeroDiagonal,
                modes: vec![i],
                t,
                x,
                margin: -diag.eval(t, x).abs(),
            });
        }
    }

    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            let (margin, t, x) = worst(&|t, x| p.cost(i, j).eval(t, x));
            if margin < 0.0 {
                violations.push(Violation {
                    rule: Rule::NonNegativeCost,
                    modes: vec![i, j],
                    t,
                    x,
                    margin,
                });
            }
        }
    }

    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            for k in (0..m).filter(|&k| k != i && k != j) {
                let (margin, t, x) = worst(&|t, x| {
                    p.cost(i, j).eval(t, x) + p.cost(j, k).eval(t, x) - p.cost(i, k).eval(t, x)
                });
                if margin <= slack {
                    violations.push(Violation {
                        rule: Rule::StrictTriangle,
                        modes: vec![i, j, k],
                        t,
                        x,
                        margin,
                    });
                }
            }
        }
    }

    let alpha = p.loop_floor();
    for i in 0..m {
        for j in (i + 1)..m {
            let (margin, t, x) =
                worst(&|t, x| p.cost(i, j).eval(t, x) + p.cost(j, i).eval(t, x) - alpha);
            if margin <= slack {
                violations.push(Violation {
                    rule: Rule::LoopFloor,
                    modes: vec![i, j],
                    t,
                    x,
                    margin,
                });
            }
        }
    }

    Ok(ValidationReport {
        passed: violations.is_empty(),
        certified,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_costs() -> Vec<Vec<CoefficientFunction>> {
        let z = CoefficientFunction::ZERO;
        vec![
            vec![z, z],
            vec![CoefficientFunction::new(0.0, 0.1, 0.5, 2.0), z],
        ]
    }

    fn two_mode(costs: Vec<Vec<CoefficientFunction>>, alpha: f64) -> SwitchingProblem {
        SwitchingProblem::affine(
            vec![CoefficientFunction::constant(1.0); 2],
            costs,
            CoefficientFunction::ZERO,
            CoefficientFunction::constant(1.0),
            1.0,
            Some(alpha),
        )
        .unwrap()
    }

    #[test]
    fn eval_matches_examples() {
        let g21 = CoefficientFunction::new(0.0, 0.1, 0.5, 2.0);
        assert_eq!(eval_coef(&g21, 1.0, 2.0), 0.1 * 2.0 + 0.5 * 1.0 + 2.0);
        assert!((eval_coef(&g21, 1.0, 2.0) - 2.7).abs() < 1e-15);
        assert_eq!(eval_coef(&CoefficientFunction::ZERO, 0.3, -7.0), 0.0);
        let psi1 = CoefficientFunction::new(1.0, 0.0, 2.0, 1.0);
        assert_eq!(eval_coef(&psi1, 0.0, 0.0), 1.0);
        assert_eq!(g21.eval(0.0, -3.0), g21.eval(0.0, 3.0));
    }

    #[test]
    fn example1_costs_pass() {
        let p = two_mode(example1_costs(), 1.0);
        let r = validate_problem(&p, -5.0, 5.0).unwrap();
        assert!(r.passed, "{r}");
        assert!(r.certified);
    }

    #[test]
    fn free_round_trip_breaks_loop_floor() {
        let z = CoefficientFunction::ZERO;
        let p = two_mode(vec![vec![z, z], vec![z, z]], 1.0);
        let r = validate_problem(&p, -5.0, 5.0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::LoopFloor);
        assert_eq!(r.violations[0].margin, -1.0);
    }

    #[test]
    fn cheap_chain_breaks_triangle() {
        let z = CoefficientFunction::ZERO;
        let c = CoefficientFunction::constant;
        let costs = vec![
            vec![z, z, c(1.0)],
            vec![c(2.0), z, z],
            vec![c(2.0), c(2.0), z],
        ];
        let p = SwitchingProblem::affine(
            vec![CoefficientFunction::ZERO; 3],
            costs,
            CoefficientFunction::ZERO,
            CoefficientFunction::ZERO,
            1.0,
            Some(0.5),
        )
        .unwrap();
        let r = validate_problem(&p, -1.0, 1.0).unwrap();
        assert!(!r.passed);
        let tri: Vec<_> = r
            .violations
            .iter()
            .filter(|v| v.rule == Rule::StrictTriangle)
            .collect();
        assert!(tri.iter().any(|v| v.modes == vec![0, 1, 2] && v.margin == -1.0));
        assert!(r.is_well_posed());
    }

    #[test]
    fn negative_cost_is_reported_at_its_worst_corner() {
        let z = CoefficientFunction::ZERO;
        let costs = vec![
            vec![z, CoefficientFunction::new(1.0, 0.0, 0.0, 0.5)],
            vec![CoefficientFunction::constant(3.0), z],
        ];
        let p = two_mode(costs, 0.1);
        let r = validate_problem(&p, -2.0, 2.0).unwrap();
        let v = r
            .violations
            .iter()
            .find(|v| v.rule == Rule::NonNegativeCost)
            .unwrap();
        assert_eq!((v.x, v.margin), (-2.0, -1.5));
        assert!(!r.is_well_posed());
    }

    #[test]
    fn malformed_domain_is_rejected() {
        let p = two_mode(example1_costs(), 1.0);
        assert!(matches!(
            validate_problem(&p, 1.0, 1.0),
            Err(ModelError::MalformedDomain { .. })
        ));
        assert!(validate_problem(&p, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn construction_invariants() {
        let z = CoefficientFunction::ZERO;
        let one = CoefficientFunction::constant(1.0);
        assert_eq!(
            SwitchingProblem::affine(vec![z], vec![vec![z]], z, z, 1.0, None).unwrap_err(),
            ModelError::TooFewModes(1)
        );
        assert!(matches!(
            SwitchingProblem::affine(vec![z; 2], vec![vec![z; 2]; 2], z, z, 0.0, None),
            Err(ModelError::BadHorizon(_))
        ));
        assert_eq!(
            SwitchingProblem::affine(vec![z; 2], vec![vec![one, one], vec![one, z]], z, z, 1.0, None)
                .unwrap_err(),
            ModelError::NonZeroDiagonal(0)
        );
        let p = SwitchingProblem::affine(vec![z; 2], vec![vec![z; 2]; 2], z, z, 1.0, None).unwrap();
        assert_eq!(p.loop_floor(), DEFAULT_LOOP_FLOOR);
    }

    #[test]
    fn custom_costs_are_sampled_not_certified() {
        let z: Coefficient = CoefficientFunction::ZERO.into();
        let costs = vec![
            vec![z.clone(), Coefficient::custom(|_, x| 1.0 + x * x)],
            vec![Coefficient::custom(|t, _| 1.0 + t), z.clone()],
        ];
        let p = SwitchingProblem::new(vec![z.clone(), z.clone()], costs, z.clone(), z, 1.0, Some(1.0))
            .unwrap();
        let r = validate_problem(&p, -1.0, 1.0).unwrap();
        assert!(r.passed);
        assert!(!r.certified);
        let strict = ValidationOptions {
            strict_slack: 1.5,
            ..Default::default()
        };
        let r = validate_problem_with(&p, -1.0, 1.0, strict).unwrap();
        assert_eq!(r.violated_rules(), vec![Rule::LoopFloor]);
    }

    #[test]
    fn permutation_relabels_modes() {
        let p = two_mode(example1_costs(), 1.0);
        let q = p.permuted(&[1, 0]).unwrap();
        assert_eq!(q.cost_at(0, 1, 1.0, 2.0), p.cost_at(1, 0, 1.0, 2.0));
        assert!(p.permuted(&[0, 0]).is_err());
    }
}
