use nalgebra::{DMatrix, DVector};

use crate::expr::eval_expr;

use super::{integrate, Differentiated, ModelError, Problem, Target, Trajectory};

/// Every value and derivative of the problem data at one `(z, t)`.
#[derive(Debug, Clone)]
pub struct PointEval {
    pub t: f64,
    pub z: DVector<f64>,
    pub phi: f64,
    pub grad_phi: DVector<f64>,
    pub hess_phi: DMatrix<f64>,
    pub h: DVector<f64>,
    /// `p × n`; row `i` is `∇h_i`.
    pub jac_h: DMatrix<f64>,
    pub hess_h: Vec<DMatrix<f64>>,
    pub g: DVector<f64>,
    /// `m × n`; row `j` is `∇g_j`.
    pub jac_g: DMatrix<f64>,
    pub hess_g: Vec<DMatrix<f64>>,
    /// Binding inequalities `{ j : g_j ≤ ε_act }`, zero-based, ascending.
    pub active: Vec<usize>,
    pub eps_act: f64,
}

impl PointEval {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.h.len()
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active.binary_search(&j).is_ok()
    }

    /// Active set recomputed at a different tolerance.
    pub fn active_at(&self, eps: f64) -> Vec<usize> {
        (0..self.m()).filter(|&j| self.g[j] <= eps).collect()
    }

    /// Rows `∇h` followed by `∇g_j` for active `j`.
    pub fn active_jacobian(&self) -> DMatrix<f64> {
        let (p, n) = (self.p(), self.n());
        let mut stacked = DMatrix::zeros(p + self.active.len(), n);
        stacked.rows_mut(0, p).copy_from(&self.jac_h);
        for (r, &j) in self.active.iter().enumerate() {
            stacked.set_row(p + r, &self.jac_g.row(j));
        }
        stacked
    }
}

fn eval_at(
    d: &Differentiated,
    z: &[f64],
    t: f64,
    target: Target,
) -> Result<(f64, DVector<f64>, DMatrix<f64>), ModelError> {
    let n = z.len();
    let wrap = |source| ModelError::Eval { target, t, source };
    let value = eval_expr(&d.value, z, t).map_err(wrap)?;
    let mut grad = DVector::zeros(n);
    for (i, e) in d.gradient.iter().enumerate() {
        grad[i] = eval_expr(e, z, t).map_err(wrap)?;
    }
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_expr(&d.hessian[i][j], z, t).map_err(wrap)?;
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((value, grad, hess))
}

fn check_dim(problem: &Problem, z: &[f64]) -> Result<(), ModelError> {
    if z.len() != problem.n() {
        return Err(ModelError::Dimension(format!(
            "state has {} components, problem has n = {}",
            z.len(),
            problem.n()
        )));
    }
    Ok(())
}

/// Evaluates objective and constraints with first and second derivatives.
pub fn evaluate_point(
    problem: &Problem,
    z: &[f64],
    t: f64,
    eps_act: f64,
) -> Result<PointEval, ModelError> {
    check_dim(problem, z)?;
    let (n, p, m) = (problem.n(), problem.p(), problem.m());
    let (phi, grad_phi, hess_phi) = eval_at(problem.objective_parts(), z, t, Target::Objective)?;

    let mut h = DVector::zeros(p);
    let mut jac_h = DMatrix::zeros(p, n);
    let mut hess_h = Vec::with_capacity(p);
    for (i, d) in problem.equality_parts().iter().enumerate() {
        let (v, grad, hess) = eval_at(d, z, t, Target::Equality(i))?;
        h[i] = v;
        jac_h.set_row(i, &grad.transpose());
        hess_h.push(hess);
    }

    let mut g = DVector::zeros(m);
    let mut jac_g = DMatrix::zeros(m, n);
    let mut hess_g = Vec::with_capacity(m);
    for (j, d) in problem.inequality_parts().iter().enumerate() {
        let (v, grad, hess) = eval_at(d, z, t, Target::Inequality(j))?;
        g[j] = v;
        jac_g.set_row(j, &grad.transpose());
        hess_g.push(hess);
    }
    let active = (0..m).filter(|&j| g[j] <= eps_act).collect();

    Ok(PointEval {
        t,
        z: DVector::from_column_slice(z),
        phi,
        grad_phi,
        hess_phi,
        h,
        jac_h,
        hess_h,
        g,
        jac_g,
        hess_g,
        active,
        eps_act,
    })
}

/// Constraint values `(h, g)` without derivatives.
pub(crate) fn constraint_values(
    problem: &Problem,
    z: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_dim(problem, z)?;
    let h = problem
        .equality_parts()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            eval_expr(&d.value, z, t).map_err(|source| ModelError::Eval {
                target: Target::Equality(i),
                t,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let g = problem
        .inequality_parts()
        .iter()
        .enumerate()
        .map(|(j, d)| {
            eval_expr(&d.value, z, t).map_err(|source| ModelError::Eval {
                target: Target::Inequality(j),
                t,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((h, g))
}

/// `P(z) = ∫ φ(z(t), t) dt` by the trapezoid rule on the trajectory's grid.
pub fn objective_value(problem: &Problem, trajectory: &Trajectory) -> Result<f64, ModelError> {
    let grid = trajectory.grid();
    let mut values = Vec::with_capacity(grid.len());
    for (k, &t) in grid.nodes().iter().enumerate() {
        let z = trajectory.row(k);
        check_dim(problem, z)?;
        let v = eval_expr(problem.objective(), z, t).map_err(|source| ModelError::Eval {
            target: Target::Objective,
            t,
            source,
        })?;
        values.push(v);
    }
    integrate(grid, &values)
}

/// Active-set band `1e-6 · (1 + max_{k,j} |g_j(z(t_k), t_k)|)`.
pub fn active_tolerance(problem: &Problem, trajectory: &Trajectory) -> Result<f64, ModelError> {
    let mut scale = 0.0f64;
    for (k, &t) in trajectory.grid().nodes().iter().enumerate() {
        let (_, g) = constraint_values(problem, trajectory.row(k), t)?;
        scale = g.iter().fold(scale, |acc, v| acc.max(v.abs()));
    }
    Ok(1e-6 * (1.0 + scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeValue {
    pub node: usize,
    pub t: f64,
    pub value: f64,
}

/// Worst-case constraint residuals over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// `max_{k,i} |h_i|`; 0 without equalities.
    pub max_eq_violation: f64,
    /// `min_{k,j} g_j`; `+∞` without inequalities.
    pub min_ineq: f64,
    /// Per equality: node of largest `|h_i|`.
    pub eq_worst: Vec<NodeValue>,
    /// Per inequality: node of smallest `g_j`.
    pub ineq_worst: Vec<NodeValue>,
    pub tol_eq: f64,
    pub tol_ineq: f64,
    pub pass: bool,
}

/// Checks `|h| ≤ tol_eq` and `g ≥ -tol_ineq` at every node.
pub fn check_feasibility(
    problem: &Problem,
    trajectory: &Trajectory,
    tol_eq: f64,
    tol_ineq: f64,
) -> Result<FeasibilityReport, ModelError> {
    let start = NodeValue {
        node: 0,
        t: 0.0,
        value: f64::NAN,
    };
    let mut eq_worst = vec![start; problem.p()];
    let mut ineq_worst = vec![start; problem.m()];
    for (k, &t) in trajectory.grid().nodes().iter().enumerate() {
        let (h, g) = constraint_values(problem, trajectory.row(k), t)?;
        for (w, v) in eq_worst.iter_mut().zip(&h) {
            if w.value.is_nan() || v.abs() > w.value {
                *w = NodeValue {
                    node: k,
                    t,
                    value: v.abs(),
                };
            }
        }
        for (w, &v) in ineq_worst.iter_mut().zip(&g) {
            if w.value.is_nan() || v < w.value {
                *w = NodeValue { node: k, t, value: v };
            }
        }
    }
    let max_eq_violation = eq_worst.iter().fold(0.0f64, |a, w| a.max(w.value));
    let min_ineq = ineq_worst.iter().fold(f64::INFINITY, |a, w| a.min(w.value));
    Ok(FeasibilityReport {
        pass: max_eq_violation <= tol_eq && min_ineq >= -tol_ineq,
        max_eq_violation,
        min_ineq,
        eq_worst,
        ineq_worst,
        tol_eq,
        tol_ineq,
    })
}
