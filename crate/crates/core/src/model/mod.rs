//! Problem data, problem files, time discretization and pointwise
//! evaluation.

mod file;
mod grid;
mod point;

use thiserror::Error;

use crate::expr::{gradient, hessian, EvalError, Expr, ParseError};

pub use file::{load_problem, save_problem, ProblemFile};
pub use grid::{build_grid, integrate, TimeGrid, Trajectory};
pub use point::{
    active_tolerance, check_feasibility, evaluate_point, objective_value, FeasibilityReport,
    NodeValue, PointEval,
};

/// Identifies one of the problem's expressions in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Objective,
    Equality(usize),
    Inequality(usize),
    Candidate(usize),
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Objective => f.write_str("objective"),
            Target::Equality(i) => write!(f, "equality {}", i + 1),
            Target::Inequality(j) => write!(f, "inequality {}", j + 1),
            Target::Candidate(k) => write!(f, "candidate component {}", k + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: ParseError },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("evaluating {target} at t = {t}: {source}")]
    Eval {
        target: Target,
        t: f64,
        source: EvalError,
    },
}

/// An expression with its symbolic gradient and Hessian in `z`.
#[derive(Debug, Clone)]
pub(crate) struct Differentiated {
    pub value: Expr,
    pub gradient: Vec<Expr>,
    pub hessian: Vec<Vec<Expr>>,
}

impl Differentiated {
    fn new(value: Expr, n: usize) -> Self {
        Differentiated {
            gradient: gradient(&value, n),
            hessian: hessian(&value, n),
            value,
        }
    }
}

/// A continuous-time program
///
/// ```text
/// maximize ∫₀ᵀ φ(z(t), t) dt   s.t.   h(z(t), t) = 0,  g(z(t), t) ≥ 0.
/// ```
///
/// Derivatives of every expression are taken once, at construction.
#[derive(Debug, Clone)]
pub struct Problem {
    name: String,
    n: usize,
    horizon: f64,
    objective: Differentiated,
    equalities: Vec<Differentiated>,
    inequalities: Vec<Differentiated>,
}

impl PartialEq for Problem {
    fn eq(&self, other: &Self) -> bool {
        let exprs = |v: &[Differentiated]| v.iter().map(|d| d.value.clone()).collect::<Vec<_>>();
        self.name == other.name
            && self.n == other.n
            && self.horizon == other.horizon
            && self.objective.value == other.objective.value
            && exprs(&self.equalities) == exprs(&other.equalities)
            && exprs(&self.inequalities) == exprs(&other.inequalities)
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        horizon: f64,
        objective: Expr,
        equalities: Vec<Expr>,
        inequalities: Vec<Expr>,
    ) -> Result<Problem, ModelError> {
        if n == 0 {
            return Err(ModelError::Invalid("state dimension n must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::Invalid(format!(
                "horizon T must be positive and finite, got {horizon}"
            )));
        }
        if equalities.len() > n {
            return Err(ModelError::Dimension(format!(
                "{} equality constraints exceed state dimension {n}",
                equalities.len()
            )));
        }
        let check = |e: &Expr, target: Target| match e.max_state_index() {
            Some(i) if i >= n => Err(ModelError::Dimension(format!(
                "{target} references z{} but n = {n}",
                i + 1
            ))),
            _ => Ok(()),
        };
        check(&objective, Target::Objective)?;
        for (i, e) in equalities.iter().enumerate() {
            check(e, Target::Equality(i))?;
        }
        for (j, e) in inequalities.iter().enumerate() {
            check(e, Target::Inequality(j))?;
        }
        Ok(Problem {
            name: name.into(),
            n,
            horizon,
            objective: Differentiated::new(objective, n),
            equalities: equalities.into_iter().map(|e| Differentiated::new(e, n)).collect(),
            inequalities: inequalities
                .into_iter()
                .map(|e| Differentiated::new(e, n))
                .collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of equality constraints.
    pub fn p(&self) -> usize {
        self.equalities.len()
    }

    /// Number of inequality constraints.
    pub fn m(&self) -> usize {
        self.inequalities.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn objective(&self) -> &Expr {
        &self.objective.value
    }

    pub fn equalities(&self) -> impl Iterator<Item = &Expr> {
        self.equalities.iter().map(|d| &d.value)
    }

    pub fn inequalities(&self) -> impl Iterator<Item = &Expr> {
        self.inequalities.iter().map(|d| &d.value)
    }

    /// Same problem with the objective multiplied by `factor`.
    pub fn with_scaled_objective(&self, factor: f64) -> Problem {
        let objective = Expr::Binary(
            crate::expr::BinaryOp::Mul,
            Box::new(Expr::Const(factor)),
            Box::new(self.objective.value.clone()),
        );
        Problem {
            objective: Differentiated::new(objective, self.n),
            ..self.clone()
        }
    }

    pub(crate) fn objective_parts(&self) -> &Differentiated {
        &self.objective
    }

    pub(crate) fn equality_parts(&self) -> &[Differentiated] {
        &self.equalities
    }

    pub(crate) fn inequality_parts(&self) -> &[Differentiated] {
        &self.inequalities
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::expr::parse_expr;

    pub fn problem(n: usize, objective: &str, eq: &[&str], ineq: &[&str]) -> Problem {
        let parse = |s: &&str| parse_expr(s, n).unwrap();
        Problem::new(
            "fixture",
            n,
            1.0,
            parse(&objective),
            eq.iter().map(parse).collect(),
            ineq.iter().map(parse).collect(),
        )
        .unwrap()
    }

    pub fn example1() -> Problem {
        problem(2, "-z1^2 - z2^2", &["z1 - z2"], &["z1 + 0.5*z2^2", "z1*z2 + 1"])
    }

    pub fn example2() -> Problem {
        problem(
            3,
            "-(z1 - 1)^2 - (z2 - 1)^2",
            &["-z1^2 - z2^2 + z3 + 1"],
            &["-2*z1*z2 + 4*z2 + z3 - 3", "-z1 + 0.5*z3 + 0.5"],
        )
    }
}
