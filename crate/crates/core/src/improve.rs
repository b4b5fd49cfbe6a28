//! Refuting optimality by exhibiting a better feasible trajectory.
//!
//! If `∫ ∇φ(z(t), t)ᵀ γ(t) dt > 0` for a bounded direction `γ`, then
//! `P(z + τγ) > P(z)` for all small enough `τ > 0`. Two sources of such
//! directions are tried:
//!
//! 1. A negative multiplier `v_k < 0` on a node set `D`. The direction
//!    `γ = Υᵀ(ΥΥᵀ)⁻¹ e_{p+k}` (first `n` components) keeps `∇h γ = 0` and
//!    `∇gⱼ γ = 0` for the other active `j` while `∇g_k γ = 1`, so
//!    stationarity gives `∇φᵀγ = -v_k > 0`. It is used on `D` and set to
//!    zero elsewhere.
//! 2. The part of `∇φ` lying in the tangent space of the active
//!    constraints, which is nonzero wherever stationarity fails.
//!
//! A step is accepted only if the perturbed trajectory is feasible and the
//! objective gain exceeds `tol_gain`, so every returned witness is a
//! genuine improvement on the grid.

use nalgebra::DVector;
use thiserror::Error;

use crate::certify::{build_upsilon, evaluate_nodes, kkt_multipliers, CertifyError, CertifyOptions};
use crate::linalg::{gram_det, min_norm_lsq};
use crate::model::{
    check_feasibility, integrate, objective_value, FeasibilityReport, ModelError, PointEval,
    Problem, Trajectory,
};
use crate::soc::tangent_basis;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefuteError {
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error("inequality {} is not active at t = {t}", .index + 1)]
    Inactive { index: usize, t: f64 },
    #[error("slack Jacobian is rank deficient at t = {t} (rank {rank} < {rows})")]
    Singular { t: f64, rank: usize, rows: usize },
    #[error("trajectory is infeasible (max |h| = {:e}, min g = {:e})", .report.max_eq_violation, .report.min_ineq)]
    Infeasible { report: FeasibilityReport },
    #[error("direction has {got} rows, grid has {expected}")]
    Shape { expected: usize, got: usize },
}

impl From<ModelError> for RefuteError {
    fn from(e: ModelError) -> Self {
        RefuteError::Certify(e.into())
    }
}

/// Direction that raises active inequality `k` at unit rate while keeping
/// the equalities and every other active inequality stationary to first
/// order.
pub fn increase_direction(
    pe: &PointEval,
    k: usize,
    tol_ineq: f64,
) -> Result<DVector<f64>, RefuteError> {
    if k >= pe.m() || !pe.is_active(k) {
        return Err(RefuteError::Inactive { index: k, t: pe.t });
    }
    let ups = build_upsilon(pe, tol_ineq)?;
    let gram = gram_det(&ups).map_err(CertifyError::from)?;
    if !gram.full_row_rank() {
        return Err(RefuteError::Singular {
            t: pe.t,
            rank: gram.rank,
            rows: gram.rows,
        });
    }
    let mut b = DVector::zeros(ups.nrows());
    b[pe.p() + k] = 1.0;
    let y = min_norm_lsq(&ups, &b, None).map_err(CertifyError::from)?;
    Ok(y.rows(0, pe.n()).into_owned())
}

/// `∫ ∇φ(z(t), t)ᵀ γ(t) dt` with trapezoid weights.
pub fn ascent_integral(
    problem: &Problem,
    trajectory: &Trajectory,
    direction: &[Vec<f64>],
) -> Result<f64, RefuteError> {
    let nodes = evaluate_nodes(problem, trajectory, 0.0)?;
    ascent_from_nodes(&nodes, trajectory, direction)
}

fn ascent_from_nodes(
    nodes: &[PointEval],
    trajectory: &Trajectory,
    direction: &[Vec<f64>],
) -> Result<f64, RefuteError> {
    if direction.len() != nodes.len() {
        return Err(RefuteError::Shape {
            expected: nodes.len(),
            got: direction.len(),
        });
    }
    let mut slopes = Vec::with_capacity(nodes.len());
    for (pe, d) in nodes.iter().zip(direction) {
        if d.len() != pe.n() {
            return Err(RefuteError::Shape {
                expected: pe.n(),
                got: d.len(),
            });
        }
        slopes.push(pe.grad_phi.iter().zip(d).map(|(a, b)| a * b).sum());
    }
    Ok(integrate(trajectory.grid(), &slopes)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefuteOptions {
    pub certify: CertifyOptions,
    /// First trial step.
    pub sigma0: f64,
    pub halvings: u32,
    /// Minimum accepted objective gain, also the minimum ascent integral.
    pub tol_gain: f64,
}

impl Default for RefuteOptions {
    fn default() -> Self {
        RefuteOptions {
            certify: CertifyOptions::default(),
            sigma0: 1.0,
            halvings: 30,
            tol_gain: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DirectionSource {
    /// Raise inequality `constraint` (zero-based) on `nodes`, where its
    /// multiplier is negative.
    NegativeMultiplier { constraint: usize, nodes: Vec<usize> },
    /// Tangential part of `∇φ`.
    ProjectedGradient,
}

/// A feasible trajectory with strictly larger objective.
#[derive(Debug, Clone, PartialEq)]
pub struct RefutationWitness {
    pub source: DirectionSource,
    /// `γ(t_k)`, one row per node.
    pub direction: Vec<Vec<f64>>,
    pub ascent: f64,
    pub step: f64,
    pub improved: Trajectory,
    pub objective_before: f64,
    pub objective_after: f64,
    pub gain: f64,
    pub feasibility: FeasibilityReport,
}

fn negative_multiplier_directions(
    nodes: &[PointEval],
    opts: &CertifyOptions,
) -> Vec<(DirectionSource, Vec<Vec<f64>>)> {
    let m = nodes.first().map_or(0, PointEval::m);
    let n = nodes.first().map_or(0, PointEval::n);
    let multipliers: Vec<_> = nodes.iter().map(kkt_multipliers).collect();
    let mut out = Vec::new();
    for k in 0..m {
        let mut direction = vec![vec![0.0; n]; nodes.len()];
        let mut on = Vec::new();
        for (node, (pe, kkt)) in nodes.iter().zip(&multipliers).enumerate() {
            if kkt.v[k] >= -opts.tol_sign {
                continue;
            }
            // Nodes where the slack Jacobian is singular contribute nothing.
            if let Ok(gamma) = increase_direction(pe, k, opts.tol_ineq) {
                direction[node] = gamma.iter().copied().collect();
                on.push(node);
            }
        }
        if !on.is_empty() {
            out.push((
                DirectionSource::NegativeMultiplier {
                    constraint: k,
                    nodes: on,
                },
                direction,
            ));
        }
    }
    out
}

fn projected_gradient(nodes: &[PointEval]) -> Vec<Vec<f64>> {
    nodes
        .iter()
        .map(|pe| {
            let b = tangent_basis(pe);
            let gamma = &b * (b.transpose() * &pe.grad_phi);
            gamma.iter().copied().collect()
        })
        .collect()
}

/// Searches for a feasible improvement of a feasible trajectory. `None`
/// means neither direction source produced one.
pub fn refute_optimality(
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &RefuteOptions,
) -> Result<Option<RefutationWitness>, RefuteError> {
    let copts = &opts.certify;
    let report = check_feasibility(problem, trajectory, copts.tol_eq, copts.tol_ineq)?;
    if !report.pass {
        return Err(RefuteError::Infeasible { report });
    }
    let eps = copts.active_band(problem, trajectory)?;
    let nodes = evaluate_nodes(problem, trajectory, eps)?;
    let before = objective_value(problem, trajectory)?;

    let mut candidates = negative_multiplier_directions(&nodes, copts);
    candidates.push((DirectionSource::ProjectedGradient, projected_gradient(&nodes)));

    for (source, direction) in candidates {
        let ascent = ascent_from_nodes(&nodes, trajectory, &direction)?;
        if !(ascent > opts.tol_gain) {
            continue;
        }
        let mut step = opts.sigma0;
        for _ in 0..=opts.halvings {
            let improved = trajectory.perturbed(&direction, step);
            // Steps that leave the domain of the data are rejected like
            // infeasible ones.
            let feasibility = check_feasibility(problem, &improved, copts.tol_eq, copts.tol_ineq);
            let after = objective_value(problem, &improved);
            if let (Ok(feasibility), Ok(after)) = (feasibility, after) {
                if feasibility.pass && after - before > opts.tol_gain {
                    let witness = RefutationWitness {
                        source,
                        direction,
                        ascent,
                        step,
                        improved,
                        objective_before: before,
                        objective_after: after,
                        gain: after - before,
                        feasibility,
                    };
                    assert!(witness.feasibility.pass && witness.gain > 0.0);
                    return Ok(Some(witness));
                }
            }
            step *= 0.5;
        }
    }
    Ok(None)
}
