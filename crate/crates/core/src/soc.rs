//! Second-order necessary condition.
//!
//! With multipliers `(u, v)` from the first-order stage, the Lagrangian
//! Hessian `H = ∇²φ + Σ uᵢ ∇²hᵢ + Σ vⱼ ∇²gⱼ` must satisfy
//! `∫ γᵀ H γ dt ≤ 0` for every `γ` in the tangent space
//! `N̄(t) = { γ : ∇h γ = 0, ∇gⱼ γ = 0 for active j }`.
//!
//! The check is pointwise: `λ_max(Bᵀ H B) ≤ tol_psd` at every node, with
//! `B` an orthonormal basis of `N̄(t)`. The pointwise condition implies the
//! integral one; conversely a positive eigenvalue on a set of positive
//! measure yields a violating `γ` supported on that set. On a grid the set
//! is a single node, so the converse holds only up to discretization.
//! [`integral_cross_check`] samples the integral form directly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certify::{evaluate_nodes, stationarity_residual, CertifyError, CertifyOptions, MultiplierTrajectory};
use crate::linalg::{max_eig_sym, nullspace_basis, LinalgError};
use crate::model::{integrate, PointEval, Problem, Trajectory};

/// `∇²φ + Σ uᵢ ∇²hᵢ + Σ vⱼ ∇²gⱼ`.
pub fn lagrangian_hessian(
    pe: &PointEval,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    if u.len() != pe.p() || v.len() != pe.m() {
        return Err(LinalgError::Shape(format!(
            "multipliers of length ({}, {}) for p = {}, m = {}",
            u.len(),
            v.len(),
            pe.p(),
            pe.m()
        )));
    }
    let mut h = pe.hess_phi.clone();
    for (ui, hi) in u.iter().zip(&pe.hess_h) {
        h += hi * *ui;
    }
    for (vj, gj) in v.iter().zip(&pe.hess_g) {
        h += gj * *vj;
    }
    Ok(h)
}

/// Orthonormal basis (`n × k`) of the kernel of `[∇h; ∇g_A]`.
pub fn tangent_basis(pe: &PointEval) -> DMatrix<f64> {
    nullspace_basis(&pe.active_jacobian(), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocNodeStatus {
    /// Tangent space is `{0}`.
    Vacuous,
    Pass,
    Fail,
    /// First-order residual above tolerance; not checked.
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocNode {
    pub tangent_dim: usize,
    /// `λ_max(Bᵀ H B)`, absent for vacuous and excluded nodes.
    pub max_eigenvalue: Option<f64>,
    pub tol_psd: f64,
    pub status: SocNodeStatus,
    /// The active set differs between `ε_act` and `10·ε_act`.
    pub active_set_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderCertificate {
    pub nodes: Vec<SocNode>,
    /// Largest projected eigenvalue over checked nodes; `-∞` when every node
    /// is vacuous.
    pub worst_eigenvalue: f64,
    pub worst_node: Option<usize>,
    pub worst_t: Option<f64>,
    pub excluded_nodes: Vec<usize>,
    pub sensitive_nodes: Vec<usize>,
    pub pass: bool,
}

impl SecondOrderCertificate {
    pub fn all_vacuous(&self) -> bool {
        self.nodes.iter().all(|n| n.status == SocNodeStatus::Vacuous)
    }
}

/// Pointwise projected-Hessian check over the grid.
pub fn second_order_certificate(
    problem: &Problem,
    trajectory: &Trajectory,
    multipliers: &MultiplierTrajectory,
    opts: &CertifyOptions,
) -> Result<SecondOrderCertificate, CertifyError> {
    let eps = opts.active_band(problem, trajectory)?;
    let evals = evaluate_nodes(problem, trajectory, eps)?;
    if multipliers.u.len() != evals.len() || multipliers.v.len() != evals.len() {
        return Err(CertifyError::Precondition(format!(
            "multipliers cover {} nodes, trajectory has {}",
            multipliers.u.len(),
            evals.len()
        )));
    }
    let k_phi = evals.iter().map(|pe| pe.grad_phi.norm()).fold(0.0, f64::max);
    let tol_stat = opts.stat_rel * (1.0 + k_phi);

    let mut nodes = Vec::with_capacity(evals.len());
    let mut worst_eigenvalue = f64::NEG_INFINITY;
    let mut worst_node = None;
    let mut excluded_nodes = Vec::new();
    let mut sensitive_nodes = Vec::new();
    for (k, pe) in evals.iter().enumerate() {
        let (u, v) = (&multipliers.u[k], &multipliers.v[k]);
        let h = lagrangian_hessian(pe, u, v)?;
        let tol_psd = opts.psd_rel * (1.0 + h.norm());
        let basis = tangent_basis(pe);
        let tangent_dim = basis.ncols();
        let active_set_sensitive = pe.active_at(10.0 * eps) != pe.active;
        if active_set_sensitive {
            sensitive_nodes.push(k);
        }
        let (max_eigenvalue, status) = if stationarity_residual(pe, u, v) > tol_stat {
            excluded_nodes.push(k);
            (None, SocNodeStatus::Excluded)
        } else if tangent_dim == 0 {
            (None, SocNodeStatus::Vacuous)
        } else {
            let projected = basis.transpose() * &h * &basis;
            let projected = (&projected + projected.transpose()) * 0.5;
            let eig = max_eig_sym(&projected)?;
            if eig > worst_eigenvalue {
                worst_eigenvalue = eig;
                worst_node = Some(k);
            }
            let status = if eig <= tol_psd {
                SocNodeStatus::Pass
            } else {
                SocNodeStatus::Fail
            };
            (Some(eig), status)
        };
        nodes.push(SocNode {
            tangent_dim,
            max_eigenvalue,
            tol_psd,
            status,
            active_set_sensitive,
        });
    }
    let pass = nodes
        .iter()
        .all(|n| matches!(n.status, SocNodeStatus::Vacuous | SocNodeStatus::Pass));
    Ok(SecondOrderCertificate {
        worst_t: worst_node.map(|k| trajectory.grid().nodes()[k]),
        nodes,
        worst_eigenvalue,
        worst_node,
        excluded_nodes,
        sensitive_nodes,
        pass,
    })
}

/// Result of sampling `∫ γᵀ H γ dt` over random tangent directions.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralCheck {
    pub samples: usize,
    /// Largest `∫ γᵀ H γ dt` seen.
    pub max_integral: f64,
    /// Largest `∫ γᵀ H γ dt / sup‖γ‖²` seen.
    pub max_ratio: f64,
    /// Allowed ratio `max_k tol_psd(t_k) · T`.
    pub bound: f64,
    pub pass: bool,
}

/// Draws `samples` directions `γ(t) = B(t) c(t)` with coefficient functions
/// `c_i(t) = a_i + b_i cos(πt/T) + c_i sin(2πt/T)` and integrates
/// `γᵀ H γ` with the trapezoid rule.
pub fn integral_cross_check(
    problem: &Problem,
    trajectory: &Trajectory,
    multipliers: &MultiplierTrajectory,
    opts: &CertifyOptions,
    samples: usize,
    seed: u64,
) -> Result<IntegralCheck, CertifyError> {
    let eps = opts.active_band(problem, trajectory)?;
    let evals = evaluate_nodes(problem, trajectory, eps)?;
    let grid = trajectory.grid();
    let n = problem.n();
    let mut pieces = Vec::with_capacity(evals.len());
    let mut bound = 0.0f64;
    for (k, pe) in evals.iter().enumerate() {
        let h = lagrangian_hessian(pe, &multipliers.u[k], &multipliers.v[k])?;
        bound = bound.max(opts.psd_rel * (1.0 + h.norm()));
        pieces.push((tangent_basis(pe), h));
    }
    bound *= grid.horizon();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_integral = f64::NEG_INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    let omega = std::f64::consts::PI / grid.horizon();
    for _ in 0..samples {
        let coeffs: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let mut quad = Vec::with_capacity(evals.len());
        let mut sup = 0.0f64;
        for (&t, (basis, h)) in grid.nodes().iter().zip(&pieces) {
            let c = DVector::from_iterator(
                basis.ncols(),
                coeffs
                    .iter()
                    .take(basis.ncols())
                    .map(|a| a[0] + a[1] * (omega * t).cos() + a[2] * (2.0 * omega * t).sin()),
            );
            let gamma = basis * c;
            sup = sup.max(gamma.norm_squared());
            quad.push(gamma.dot(&(h * &gamma)));
        }
        let value = integrate(grid, &quad)?;
        max_integral = max_integral.max(value);
        if sup > 0.0 {
            max_ratio = max_ratio.max(value / sup);
        }
    }
    if samples == 0 || max_ratio == f64::NEG_INFINITY {
        max_ratio = 0.0;
        max_integral = max_integral.max(0.0);
    }
    Ok(IntegralCheck {
        samples,
        max_integral,
        max_ratio,
        bound,
        pass: max_ratio <= bound,
    })
}
