//! Candidate trajectories from pointwise maximization.
//!
//! Constraints and integrand act pointwise in `t`, so maximizing `P` over
//! trajectories reduces to maximizing `φ(·, t)` subject to `h = 0`, `g ≥ 0`
//! separately at each grid node. Each node is solved by multi-start
//! augmented Lagrangian with a BFGS inner loop, followed by a Newton polish
//! on the KKT system of the detected active set.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::certify::{first_order_certificate, CertifyError, FirstOrderCertificate};
use crate::expr::{eval_expr, Expr};
use crate::improve::{refute_optimality, RefutationWitness, RefuteError, RefuteOptions};
use crate::linalg::min_norm_lsq;
use crate::model::{evaluate_point, Differentiated, ModelError, PointEval, Problem, TimeGrid, Trajectory};
use crate::soc::{second_order_certificate, SecondOrderCertificate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no feasible point found at t = {t}; best constraint violation {best_violation:e}")]
    NoFeasiblePoint { t: f64, best_violation: f64 },
    #[error("{} of {total} nodes unsolved (first at t = {first_t}); worst violation {worst_violation:e}", .failed.len())]
    Unsolved {
        failed: Vec<usize>,
        total: usize,
        first_t: f64,
        worst_violation: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Refute(#[from] RefuteError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Random starts per node, drawn uniformly from `[-box_radius, box_radius]ⁿ`.
    pub starts: usize,
    pub box_radius: f64,
    pub seed: u64,
    pub penalty0: f64,
    pub penalty_growth: f64,
    pub outer_iterations: usize,
    /// Inner loop stops once `‖∇L_A‖ ≤ inner_tol`.
    pub inner_tol: f64,
    pub inner_max_iterations: usize,
    /// A point counts as feasible when `|h| ≤ feas_tol` and `g ≥ -feas_tol`.
    pub feas_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            starts: 16,
            box_radius: 5.0,
            seed: 0,
            penalty0: 10.0,
            penalty_growth: 10.0,
            outer_iterations: 8,
            inner_tol: 1e-10,
            inner_max_iterations: 500,
            feas_tol: 1e-8,
        }
    }
}

/// Best point found at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
}

/// Values and gradients needed by the augmented Lagrangian.
struct FirstOrder {
    phi: f64,
    grad_phi: DVector<f64>,
    h: DVector<f64>,
    jac_h: DMatrix<f64>,
    g: DVector<f64>,
    jac_g: DMatrix<f64>,
}

fn violation(h: &[f64], g: &[f64]) -> f64 {
    let eq = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    g.iter().fold(eq, |a, v| a.max(-v))
}

struct Node<'a> {
    problem: &'a Problem,
    t: f64,
}

impl Node<'_> {
    fn values(&self, z: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let ev = |e| eval_expr(e, z, self.t).ok().filter(|v: &f64| v.is_finite());
        let phi = ev(self.problem.objective())?;
        let h = self.problem.equalities().map(ev).collect::<Option<Vec<_>>>()?;
        let g = self.problem.inequalities().map(ev).collect::<Option<Vec<_>>>()?;
        Some((phi, h, g))
    }

    fn first_order(&self, z: &[f64]) -> Option<FirstOrder> {
        let n = z.len();
        let ev = |e: &Expr| eval_expr(e, z, self.t).ok().filter(|v| v.is_finite());
        let grad = |exprs: &[Expr]| -> Option<DVector<f64>> {
            let v = exprs.iter().map(ev).collect::<Option<Vec<_>>>()?;
            Some(DVector::from_vec(v))
        };
        let obj = self.problem.objective_parts();
        let phi = ev(&obj.value)?;
        let grad_phi = grad(&obj.gradient)?;
        let stack = |parts: &[Differentiated]| {
            let mut vals = DVector::zeros(parts.len());
            let mut jac = DMatrix::zeros(parts.len(), n);
            for (i, d) in parts.iter().enumerate() {
                vals[i] = ev(&d.value)?;
                jac.set_row(i, &grad(&d.gradient)?.transpose());
            }
            Some((vals, jac))
        };
        let (h, jac_h) = stack(self.problem.equality_parts())?;
        let (g, jac_g) = stack(self.problem.inequality_parts())?;
        Some(FirstOrder {
            phi,
            grad_phi,
            h,
            jac_h,
            g,
            jac_g,
        })
    }
}

/// PHR augmented Lagrangian for `min -φ` s.t. `h = 0`, `g ≥ 0`.
struct Augmented<'a> {
    node: &'a Node<'a>,
    lambda: DVector<f64>,
    mu: DVector<f64>,
    rho: f64,
}

impl Augmented<'_> {
    fn value_grad(&self, z: &[f64]) -> Option<(f64, DVector<f64>)> {
        let fo = self.node.first_order(z)?;
        let rho = self.rho;
        let mut value = -fo.phi;
        let mut grad = -&fo.grad_phi;
        for i in 0..fo.h.len() {
            value += self.lambda[i] * fo.h[i] + 0.5 * rho * fo.h[i] * fo.h[i];
            grad += fo.jac_h.row(i).transpose() * (self.lambda[i] + rho * fo.h[i]);
        }
        for j in 0..fo.g.len() {
            let shifted = (self.mu[j] - rho * fo.g[j]).max(0.0);
            value += (shifted * shifted - self.mu[j] * self.mu[j]) / (2.0 * rho);
            grad -= fo.jac_g.row(j).transpose() * shifted;
        }
        value.is_finite().then_some((value, grad))
    }

    fn value(&self, z: &[f64]) -> Option<f64> {
        let (phi, h, g) = self.node.values(z)?;
        let rho = self.rho;
        let mut value = -phi;
        for (i, hi) in h.iter().enumerate() {
            value += self.lambda[i] * hi + 0.5 * rho * hi * hi;
        }
        for (j, gj) in g.iter().enumerate() {
            let shifted = (self.mu[j] - rho * gj).max(0.0);
            value += (shifted * shifted - self.mu[j] * self.mu[j]) / (2.0 * rho);
        }
        value.is_finite().then_some(value)
    }
}

const MAX_STEP: f64 = 10.0;

/// BFGS with Armijo backtracking and a cap on the step length. Points
/// outside the domain of the data are treated as `+∞`.
fn bfgs(al: &Augmented, z0: DVector<f64>, tol: f64, max_iter: usize) -> Option<DVector<f64>> {
    let n = z0.len();
    let mut z = z0;
    let (mut f, mut grad) = al.value_grad(z.as_slice())?;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if grad.norm() <= tol {
            break;
        }
        let mut d = -(&hinv * &grad);
        let mut slope = grad.dot(&d);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            d = -grad.clone();
            slope = grad.dot(&d);
        }
        let len = d.norm();
        if len > MAX_STEP {
            d *= MAX_STEP / len;
            slope *= MAX_STEP / len;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &z + &d * alpha;
            if let Some(ft) = al.value(trial.as_slice()) {
                if ft <= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, _)) = accepted else { break };
        let Some((f_new, g_new)) = al.value_grad(trial.as_slice()) else { break };
        let s = &trial - &z;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let r = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H ← (I - r s yᵀ) H (I - r y sᵀ) + r s sᵀ, expanded.
            hinv += (&s * s.transpose()) * (r * r * yhy + r)
                - (&hy * s.transpose() + &s * hy.transpose()) * r;
        }
        let stalled = (f - f_new).abs() <= 1e-16 * (1.0 + f.abs()) && s.norm() <= 1e-16 * (1.0 + z.norm());
        z = trial;
        f = f_new;
        grad = g_new;
        if stalled {
            break;
        }
    }
    Some(z)
}

fn augmented_lagrangian(node: &Node, z0: &[f64], opts: &SolveOptions) -> Option<DVector<f64>> {
    let (p, m) = (node.problem.p(), node.problem.m());
    let mut al = Augmented {
        node,
        lambda: DVector::zeros(p),
        mu: DVector::zeros(m),
        rho: opts.penalty0,
    };
    let mut z = DVector::from_column_slice(z0);
    node.values(z0)?;
    let mut previous = f64::INFINITY;
    for outer in 0..opts.outer_iterations.max(1) {
        z = bfgs(&al, z, opts.inner_tol, opts.inner_max_iterations)?;
        if p + m == 0 {
            break;
        }
        let (_, h, g) = node.values(z.as_slice())?;
        let viol = violation(&h, &g);
        for i in 0..p {
            al.lambda[i] += al.rho * h[i];
        }
        for j in 0..m {
            al.mu[j] = (al.mu[j] - al.rho * g[j]).max(0.0);
        }
        if viol <= 1e-2 * opts.feas_tol && outer > 0 {
            break;
        }
        if viol > 0.25 * previous {
            al.rho *= opts.penalty_growth;
        }
        previous = viol;
    }
    Some(z)
}

/// Newton iteration on `∇φ + Jᵀy = 0`, `c = 0` with `J = [∇h; ∇g_A]`,
/// solved by pseudo-inverse so rank-deficient active sets still make
/// progress. Returns the polished point only if it is feasible and, when the
/// input already was, no worse in objective.
fn polish(node: &Node, z: &DVector<f64>, feas_tol: f64) -> Option<DVector<f64>> {
    let problem = node.problem;
    let (n, p) = (problem.n(), problem.p());
    let pe0 = evaluate_point(problem, z.as_slice(), node.t, 0.0).ok()?;
    let band = 1e-6 * (1.0 + pe0.g.amax());
    let active: Vec<usize> = (0..pe0.m()).filter(|&j| pe0.g[j] <= band).collect();
    let rows = p + active.len();

    let residual = |pe: &PointEval, y: &DVector<f64>| {
        let jac = stacked(pe, &active);
        let mut r = DVector::zeros(n + rows);
        r.rows_mut(0, n).copy_from(&(&pe.grad_phi + jac.transpose() * y));
        for i in 0..p {
            r[n + i] = pe.h[i];
        }
        for (a, &j) in active.iter().enumerate() {
            r[n + p + a] = pe.g[j];
        }
        (r, jac)
    };

    let mut zc = z.clone();
    let mut pe = pe0.clone();
    let mut y = min_norm_lsq(&stacked(&pe, &active).transpose(), &(-&pe.grad_phi), None).ok()?;
    let (mut r, mut jac) = residual(&pe, &y);
    for _ in 0..20 {
        if r.norm() <= 1e-15 * (1.0 + pe.grad_phi.norm()) {
            break;
        }
        let mut hl = pe.hess_phi.clone();
        for i in 0..p {
            hl += &pe.hess_h[i] * y[i];
        }
        for (a, &j) in active.iter().enumerate() {
            hl += &pe.hess_g[j] * y[p + a];
        }
        let mut kkt = DMatrix::zeros(n + rows, n + rows);
        kkt.view_mut((0, 0), (n, n)).copy_from(&hl);
        kkt.view_mut((0, n), (n, rows)).copy_from(&jac.transpose());
        kkt.view_mut((n, 0), (rows, n)).copy_from(&jac);
        let step = min_norm_lsq(&kkt, &(-&r), None).ok()?;
        let z_new = &zc + step.rows(0, n);
        let y_new = &y + step.rows(n, rows);
        let Ok(pe_new) = evaluate_point(problem, z_new.as_slice(), node.t, 0.0) else { break };
        let (r_new, jac_new) = residual(&pe_new, &y_new);
        if !(r_new.norm() < r.norm()) {
            break;
        }
        zc = z_new;
        y = y_new;
        pe = pe_new;
        r = r_new;
        jac = jac_new;
    }
    let before = violation(pe0.h.as_slice(), pe0.g.as_slice());
    let after = violation(pe.h.as_slice(), pe.g.as_slice());
    // Restoring feasibility may cost objective; only a feasible start has
    // an objective worth protecting.
    let no_worse = before > feas_tol || pe.phi >= pe0.phi - 1e-8 * (1.0 + pe0.phi.abs());
    (after <= feas_tol && after <= before.max(1e-15) && no_worse).then_some(zc)
}

fn stacked(pe: &PointEval, active: &[usize]) -> DMatrix<f64> {
    let (n, p) = (pe.n(), pe.p());
    let mut jac = DMatrix::zeros(p + active.len(), n);
    jac.rows_mut(0, p).copy_from(&pe.jac_h);
    for (a, &j) in active.iter().enumerate() {
        jac.set_row(p + a, &pe.jac_g.row(j));
    }
    jac
}

fn local_solve(node: &Node, z0: &[f64], opts: &SolveOptions) -> Option<PointSolution> {
    let z = augmented_lagrangian(node, z0, opts)?;
    let z = polish(node, &z, opts.feas_tol).unwrap_or(z);
    let (phi, h, g) = node.values(z.as_slice())?;
    Some(PointSolution {
        z: z.iter().copied().collect(),
        objective: phi,
        violation: violation(&h, &g),
    })
}

/// `a` beats `b`: larger objective, or a tie within `1e-12·(1+|f|)` and a
/// lexicographically smaller `z`.
fn better(a: &PointSolution, b: &PointSolution) -> bool {
    let tol = 1e-12 * (1.0 + a.objective.abs().max(b.objective.abs()));
    if a.objective > b.objective + tol {
        return true;
    }
    if a.objective < b.objective - tol {
        return false;
    }
    a.z.iter()
        .zip(&b.z)
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

fn node_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn solve_node(
    problem: &Problem,
    t: f64,
    rng: &mut ChaCha8Rng,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<PointSolution, PointSolution> {
    let node = Node { problem, t };
    let n = problem.n();
    let mut starts: Vec<Vec<f64>> = warm.map(|w| vec![w.to_vec()]).unwrap_or_default();
    for _ in 0..opts.starts {
        starts.push(
            (0..n)
                .map(|_| rng.random_range(-opts.box_radius..=opts.box_radius))
                .collect(),
        );
    }
    let mut best: Option<PointSolution> = None;
    let mut least_infeasible: Option<PointSolution> = None;
    for z0 in &starts {
        let Some(sol) = local_solve(&node, z0, opts) else { continue };
        if sol.violation <= opts.feas_tol {
            if best.as_ref().is_none_or(|b| better(&sol, b)) {
                best = Some(sol);
            }
        } else if least_infeasible
            .as_ref()
            .is_none_or(|b| sol.violation < b.violation)
        {
            least_infeasible = Some(sol);
        }
    }
    best.ok_or_else(|| {
        least_infeasible.unwrap_or(PointSolution {
            z: vec![f64::NAN; n],
            objective: f64::NAN,
            violation: f64::INFINITY,
        })
    })
}

/// Multi-start maximization of `φ(·, t)` subject to the constraints at one
/// time. Deterministic in `opts.seed`.
pub fn solve_pointwise(
    problem: &Problem,
    t: f64,
    opts: &SolveOptions,
) -> Result<PointSolution, SolveError> {
    let mut rng = node_rng(opts.seed, 0);
    solve_node(problem, t, &mut rng, None, opts).map_err(|best| SolveError::NoFeasiblePoint {
        t,
        best_violation: best.violation,
    })
}

/// Per-node solutions assembled into a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    /// Unsolved nodes hold the least infeasible point found (NaN if none).
    pub trajectory: Trajectory,
    /// Nodes where no feasible point was found.
    pub failed: Vec<usize>,
    pub violations: Vec<f64>,
}

impl TrajectorySolution {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Solves every node in order, warm-starting from the previous node's
/// solution. Node `k` draws its random starts from stream `k` of the seeded
/// generator.
pub fn solve_trajectory(
    problem: &Problem,
    grid: &TimeGrid,
    opts: &SolveOptions,
) -> Result<TrajectorySolution, SolveError> {
    let mut rows = Vec::with_capacity(grid.len());
    let mut failed = Vec::new();
    let mut violations = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for (k, &t) in grid.nodes().iter().enumerate() {
        let mut rng = node_rng(opts.seed, k as u64);
        match solve_node(problem, t, &mut rng, warm.as_deref(), opts) {
            Ok(sol) => {
                warm = Some(sol.z.clone());
                violations.push(sol.violation);
                rows.push(sol.z);
            }
            Err(best) => {
                failed.push(k);
                violations.push(best.violation);
                rows.push(best.z);
            }
        }
    }
    Ok(TrajectorySolution {
        trajectory: Trajectory::from_values(grid.clone(), rows)?,
        failed,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedSolution {
    pub trajectory: Trajectory,
    pub first_order: FirstOrderCertificate,
    /// Present whenever multipliers could be computed.
    pub second_order: Option<SecondOrderCertificate>,
    /// Attempted only when a certificate fails.
    pub refutation: Option<RefutationWitness>,
}

/// Solve, then certify; attempt a refutation if either certificate fails.
pub fn certified_solve(
    problem: &Problem,
    grid: &TimeGrid,
    solve: &SolveOptions,
    refute: &RefuteOptions,
) -> Result<CertifiedSolution, SolveError> {
    let sol = solve_trajectory(problem, grid, solve)?;
    if let Some(&first) = sol.failed.first() {
        return Err(SolveError::Unsolved {
            total: grid.len(),
            first_t: grid.nodes()[first],
            worst_violation: sol
                .failed
                .iter()
                .map(|&k| sol.violations[k])
                .fold(0.0, f64::max),
            failed: sol.failed,
        });
    }
    let trajectory = sol.trajectory;
    let first_order = first_order_certificate(problem, &trajectory, &refute.certify)?;
    let second_order = match &first_order.multipliers {
        Some(mult) => Some(second_order_certificate(problem, &trajectory, mult, &refute.certify)?),
        None => None,
    };
    let certified = first_order.passed() && second_order.as_ref().is_some_and(|s| s.pass);
    let refutation = if certified || !first_order.feasibility.pass {
        None
    } else {
        refute_optimality(problem, &trajectory, refute)?
    };
    Ok(CertifiedSolution {
        trajectory,
        first_order,
        second_order,
        refutation,
    })
}
