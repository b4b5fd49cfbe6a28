//! First-order certification.
//!
//! At every grid node the candidate is checked for a multiplier pair
//! `(u, v)` with
//!
//! ```text
//! ∇φ + Σ uᵢ ∇hᵢ + Σ vⱼ ∇gⱼ = 0,   v ≥ 0,   vⱼ gⱼ = 0,
//! ```
//!
//! together with the full-rank regularity conditions that guarantee such
//! multipliers exist at a local maximizer: `det(∇h ∇hᵀ) ≥ K` for equality
//! constraints alone and `det(Υ Υᵀ) ≥ K` for the slack-augmented Jacobian
//!
//! ```text
//! Υ = [ ∇h   0              ]
//!     [ ∇g   diag(-2 w̄ⱼ)    ],   w̄ⱼ = √gⱼ.
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{
    self, gram_det, inverse_norm_bound, max_eig_sym, min_norm_lsq, GramReport, LinalgError,
};
use crate::model::{
    active_tolerance, check_feasibility, evaluate_point, FeasibilityReport, ModelError, PointEval,
    Problem, TimeGrid, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("equality Jacobian has rank {} < {} (det = {:e})", .gram.rank, .gram.rows, .gram.det)]
    RankDeficient { gram: GramReport },
    #[error("inequality {} is violated beyond tolerance: g = {value:e}", .index + 1)]
    StronglyInfeasible { index: usize, value: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Thresholds shared by the certification, second-order and refutation
/// stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub tol_eq: f64,
    pub tol_ineq: f64,
    /// Absolute active-set band; derived from the trajectory when `None`.
    pub eps_act: Option<f64>,
    /// Floor on the Gram-determinant infimum.
    pub k_min: f64,
    /// Multipliers down to `-tol_sign` count as non-negative.
    pub tol_sign: f64,
    /// Stationarity tolerance is `stat_rel · (1 + K_φ)`.
    pub stat_rel: f64,
    /// Second-order tolerance is `psd_rel · (1 + ‖H‖)` per node.
    pub psd_rel: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            tol_eq: 1e-8,
            tol_ineq: 1e-8,
            eps_act: None,
            k_min: 1e-8,
            tol_sign: 1e-8,
            stat_rel: 1e-7,
            psd_rel: 1e-8,
        }
    }
}

impl CertifyOptions {
    pub fn active_band(&self, problem: &Problem, trajectory: &Trajectory) -> Result<f64, ModelError> {
        match self.eps_act {
            Some(eps) => Ok(eps),
            None => active_tolerance(problem, trajectory),
        }
    }
}

/// Evaluates the problem at every node of the trajectory.
pub fn evaluate_nodes(
    problem: &Problem,
    trajectory: &Trajectory,
    eps_act: f64,
) -> Result<Vec<PointEval>, ModelError> {
    trajectory
        .grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, &t)| evaluate_point(problem, trajectory.row(k), t, eps_act))
        .collect()
}

/// Multipliers sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierTrajectory {
    pub grid: TimeGrid,
    /// Equality multipliers, one `p`-vector per node.
    pub u: Vec<DVector<f64>>,
    /// Inequality multipliers, one `m`-vector per node.
    pub v: Vec<DVector<f64>>,
}

impl MultiplierTrajectory {
    pub fn sup_u(&self) -> f64 {
        self.u.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn sup_v(&self) -> f64 {
        self.v.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }
}

/// `u = -(∇h ∇hᵀ)⁻¹ ∇h ∇φ`, computed as the least-squares solution of
/// `∇hᵀ u = -∇φ`.
pub fn equality_multipliers(pe: &PointEval) -> Result<DVector<f64>, CertifyError> {
    if pe.p() == 0 {
        return Err(CertifyError::Precondition(
            "equality multipliers need at least one equality constraint".into(),
        ));
    }
    let gram = gram_det(&pe.jac_h)?;
    if !gram.full_row_rank() {
        return Err(CertifyError::RankDeficient { gram });
    }
    Ok(min_norm_lsq(&pe.jac_h.transpose(), &(-&pe.grad_phi), None)?)
}

/// Slack-augmented Jacobian `Υ`, `(p+m) × (n+m)`.
///
/// `w̄ⱼ = √max(gⱼ, 0)` for inactive constraints. Active constraints get a
/// zero slack entry, which is what `gⱼ = 0` gives exactly and keeps the
/// active rows of `Υ` equal to `(∇gⱼ, 0)` inside the tolerance band.
pub fn build_upsilon(pe: &PointEval, tol_ineq: f64) -> Result<DMatrix<f64>, CertifyError> {
    let (n, p, m) = (pe.n(), pe.p(), pe.m());
    if let Some(j) = (0..m).find(|&j| pe.g[j] < -tol_ineq) {
        return Err(CertifyError::StronglyInfeasible {
            index: j,
            value: pe.g[j],
        });
    }
    let mut ups = DMatrix::zeros(p + m, n + m);
    ups.view_mut((0, 0), (p, n)).copy_from(&pe.jac_h);
    ups.view_mut((p, 0), (m, n)).copy_from(&pe.jac_g);
    for j in 0..m {
        let w = if pe.is_active(j) { 0.0 } else { pe.g[j].max(0.0).sqrt() };
        ups[(p + j, n + j)] = -2.0 * w;
    }
    Ok(ups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CqKind {
    /// `det(∇h ∇hᵀ) ≥ K`.
    EqualityGram,
    /// `det(Υ Υᵀ) ≥ K`.
    SlackGram,
    /// Linear independence of `∇h` and the active `∇gⱼ`.
    ActiveLicq,
}

impl CqKind {
    pub fn label(self) -> &'static str {
        match self {
            CqKind::EqualityGram => "H4",
            CqKind::SlackGram => "H7",
            CqKind::ActiveLicq => "LICQ-active",
        }
    }
}

/// Per-node Gram data of a regularity check.
#[derive(Debug, Clone, PartialEq)]
pub struct CqNode {
    pub det: f64,
    pub log_det: f64,
    pub rank: usize,
    pub rows: usize,
    pub spectral_norm: f64,
    /// Number of active inequalities (`q_a`); `q_c = m - q_a`.
    pub active_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqReport {
    pub kind: CqKind,
    pub nodes: Vec<CqNode>,
    /// Minimum Gram determinant over nodes; `+∞` when the matrix is empty.
    pub infimum: f64,
    pub worst_node: Option<usize>,
    pub worst_t: Option<f64>,
    pub min_rank: usize,
    /// Rows of the checked matrix, i.e. the rank needed for regularity.
    pub required_rank: usize,
    /// `sup ‖M Mᵀ‖` over nodes.
    pub sup_gram_norm: f64,
    pub k_min: f64,
    pub pass: bool,
}

fn cq_report(
    kind: CqKind,
    grid: &TimeGrid,
    grams: Vec<(GramReport, usize)>,
    k_min: f64,
) -> CqReport {
    let required_rank = grams.first().map_or(0, |(g, _)| g.rows);
    let mut infimum = f64::INFINITY;
    let mut worst_node = None;
    let mut min_rank = usize::MAX;
    let mut sup_gram_norm = 0.0f64;
    let nodes: Vec<CqNode> = grams
        .into_iter()
        .map(|(g, active_count)| CqNode {
            det: g.det,
            log_det: g.log_det,
            rank: g.rank,
            rows: g.rows,
            spectral_norm: g.spectral_norm,
            active_count,
        })
        .collect();
    for (k, node) in nodes.iter().enumerate() {
        min_rank = min_rank.min(node.rank);
        sup_gram_norm = sup_gram_norm.max(node.spectral_norm * node.spectral_norm);
        if node.rows > 0 && node.det < infimum {
            infimum = node.det;
            worst_node = Some(k);
        }
    }
    if nodes.iter().any(|n| n.rows > 0 && n.det.is_nan()) {
        infimum = f64::NAN;
    }
    CqReport {
        kind,
        infimum,
        worst_t: worst_node.map(|k| grid.nodes()[k]),
        worst_node,
        min_rank: if nodes.is_empty() { 0 } else { min_rank },
        required_rank,
        sup_gram_norm,
        k_min,
        pass: infimum >= k_min,
        nodes,
    }
}

fn check_with(
    kind: CqKind,
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &CertifyOptions,
    matrix: impl Fn(&PointEval) -> Result<DMatrix<f64>, CertifyError>,
) -> Result<CqReport, CertifyError> {
    let eps = opts.active_band(problem, trajectory)?;
    let mut grams = Vec::with_capacity(trajectory.grid().len());
    for pe in evaluate_nodes(problem, trajectory, eps)? {
        grams.push((gram_det(&matrix(&pe)?)?, pe.active.len()));
    }
    Ok(cq_report(kind, trajectory.grid(), grams, opts.k_min))
}

/// Equality-constraint regularity: `inf_t det(∇h ∇hᵀ) ≥ k_min`.
pub fn check_h4(
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &CertifyOptions,
) -> Result<CqReport, CertifyError> {
    check_with(CqKind::EqualityGram, problem, trajectory, opts, |pe| {
        Ok(pe.jac_h.clone())
    })
}

/// Slack-augmented regularity: `inf_t det(Υ Υᵀ) ≥ k_min`.
pub fn check_h7(
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &CertifyOptions,
) -> Result<CqReport, CertifyError> {
    check_with(CqKind::SlackGram, problem, trajectory, opts, |pe| {
        build_upsilon(pe, opts.tol_ineq)
    })
}

/// Linear independence of the equality and active inequality gradients.
pub fn check_active_licq(
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &CertifyOptions,
) -> Result<CqReport, CertifyError> {
    check_with(CqKind::ActiveLicq, problem, trajectory, opts, |pe| {
        Ok(pe.active_jacobian())
    })
}

/// Multipliers at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct KktMultipliers {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// `‖∇φ + ∇hᵀu + ∇gᵀv‖`.
    pub residual: f64,
    /// Whether `∇h` and the active `∇gⱼ` are linearly independent; when not,
    /// the minimal-norm representative is returned.
    pub unique: bool,
}

/// Solves `∇hᵀ u + ∇g_Aᵀ v_A = -∇φ` in the least-squares sense over the
/// active set `A`, with `vⱼ = 0` for inactive `j`.
pub fn kkt_multipliers(pe: &PointEval) -> KktMultipliers {
    let (p, m) = (pe.p(), pe.m());
    let columns = pe.active_jacobian().transpose();
    let rhs = -&pe.grad_phi;
    let y = min_norm_lsq(&columns, &rhs, None).expect("shapes agree by construction");
    let sv = linalg::singular_values(&columns);
    let tol = linalg::rank_tolerance(
        sv.first().copied().unwrap_or(0.0),
        columns.nrows(),
        columns.ncols(),
    );
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let residual = (&pe.grad_phi + &columns * &y).norm();
    let u = y.rows(0, p).into_owned();
    let mut v = DVector::zeros(m);
    for (r, &j) in pe.active.iter().enumerate() {
        v[j] = y[p + r];
    }
    KktMultipliers {
        u,
        v,
        residual,
        unique: rank == columns.ncols(),
    }
}

/// Stationarity residual `‖∇φ + ∇hᵀu + ∇gᵀv‖` for given multipliers.
pub fn stationarity_residual(pe: &PointEval, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (&pe.grad_phi + pe.jac_h.transpose() * u + pe.jac_g.transpose() * v).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstOrderVerdict {
    Pass,
    Infeasible,
    CqFailed,
    NotStationary,
    NegativeMultiplier,
}

/// Multiplier bound `‖(u, v)‖ ≤ M·K₀·K_φ` with `M = L^(d-1)/K` from the
/// slack Gram data.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierBound {
    pub inverse_norm: f64,
    pub k0: f64,
    pub k_phi: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderCertificate {
    pub feasibility: FeasibilityReport,
    pub eps_act: f64,
    pub h4: CqReport,
    pub h7: Option<CqReport>,
    pub licq: Option<CqReport>,
    /// Absent for infeasible trajectories.
    pub multipliers: Option<MultiplierTrajectory>,
    /// Per-node stationarity residuals.
    pub stationarity: Vec<f64>,
    pub max_stationarity: f64,
    /// `max |vⱼ gⱼ|`.
    pub max_complementarity: f64,
    /// `min vⱼ`; `+∞` without inequalities.
    pub min_multiplier: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    /// Nodes where the multipliers are not unique.
    pub non_unique_nodes: Vec<usize>,
    pub bound: Option<MultiplierBound>,
    pub k_phi: f64,
    pub tol_stat: f64,
    pub tol_comp: f64,
    pub verdict: FirstOrderVerdict,
}

impl FirstOrderCertificate {
    pub fn passed(&self) -> bool {
        self.verdict == FirstOrderVerdict::Pass
    }
}

/// Feasibility, regularity and KKT multipliers over the whole grid.
pub fn first_order_certificate(
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &CertifyOptions,
) -> Result<FirstOrderCertificate, CertifyError> {
    let feasibility = check_feasibility(problem, trajectory, opts.tol_eq, opts.tol_ineq)?;
    let eps_act = opts.active_band(problem, trajectory)?;
    let h4 = check_h4(problem, trajectory, opts)?;
    let nodes = evaluate_nodes(problem, trajectory, eps_act)?;
    let k_phi = nodes.iter().map(|pe| pe.grad_phi.norm()).fold(0.0, f64::max);
    let tol_stat = opts.stat_rel * (1.0 + k_phi);

    if !feasibility.pass {
        return Ok(FirstOrderCertificate {
            feasibility,
            eps_act,
            h4,
            h7: None,
            licq: None,
            multipliers: None,
            stationarity: Vec::new(),
            max_stationarity: f64::NAN,
            max_complementarity: f64::NAN,
            min_multiplier: f64::NAN,
            sup_u: f64::NAN,
            sup_v: f64::NAN,
            non_unique_nodes: Vec::new(),
            bound: None,
            k_phi,
            tol_stat,
            tol_comp: tol_stat,
            verdict: FirstOrderVerdict::Infeasible,
        });
    }

    let h7 = check_h7(problem, trajectory, opts)?;
    let licq = check_active_licq(problem, trajectory, opts)?;

    let mut u = Vec::with_capacity(nodes.len());
    let mut v = Vec::with_capacity(nodes.len());
    let mut stationarity = Vec::with_capacity(nodes.len());
    let mut non_unique_nodes = Vec::new();
    let mut max_complementarity = 0.0f64;
    let mut min_multiplier = f64::INFINITY;
    let mut k0 = 0.0f64;
    for (k, pe) in nodes.iter().enumerate() {
        let kkt = kkt_multipliers(pe);
        if !kkt.unique {
            non_unique_nodes.push(k);
        }
        for j in 0..pe.m() {
            max_complementarity = max_complementarity.max((kkt.v[j] * pe.g[j]).abs());
            min_multiplier = min_multiplier.min(kkt.v[j]);
        }
        let mut jac = DMatrix::zeros(pe.p() + pe.m(), pe.n());
        jac.rows_mut(0, pe.p()).copy_from(&pe.jac_h);
        jac.rows_mut(pe.p(), pe.m()).copy_from(&pe.jac_g);
        k0 = k0.max(linalg::singular_values(&jac).first().copied().unwrap_or(0.0));
        stationarity.push(kkt.residual);
        u.push(kkt.u);
        v.push(kkt.v);
    }
    let multipliers = MultiplierTrajectory {
        grid: trajectory.grid().clone(),
        u,
        v,
    };
    let max_stationarity = stationarity.iter().copied().fold(0.0, f64::max);
    let sup_u = multipliers.sup_u();
    let sup_v = multipliers.sup_v();

    let dim = problem.p() + problem.m();
    let bound = if h7.pass && dim > 0 && h7.infimum.is_finite() && h7.sup_gram_norm > 0.0 {
        inverse_norm_bound(h7.infimum, h7.sup_gram_norm, dim)
            .ok()
            .map(|inverse_norm| {
                let bound = inverse_norm * k0 * k_phi;
                let sup_uv = multipliers
                    .u
                    .iter()
                    .zip(&multipliers.v)
                    .map(|(a, b)| (a.norm_squared() + b.norm_squared()).sqrt())
                    .fold(0.0, f64::max);
                MultiplierBound {
                    inverse_norm,
                    k0,
                    k_phi,
                    bound,
                    holds: sup_uv <= bound * (1.0 + 1e-12),
                }
            })
    } else {
        None
    };

    let tol_comp = tol_stat;
    let verdict = if !h7.pass {
        FirstOrderVerdict::CqFailed
    } else if max_stationarity > tol_stat || max_complementarity > tol_comp {
        FirstOrderVerdict::NotStationary
    } else if min_multiplier < -opts.tol_sign {
        FirstOrderVerdict::NegativeMultiplier
    } else {
        FirstOrderVerdict::Pass
    };

    Ok(FirstOrderCertificate {
        feasibility,
        eps_act,
        h4,
        h7: Some(h7),
        licq: Some(licq),
        multipliers: Some(multipliers),
        stationarity,
        max_stationarity,
        max_complementarity,
        min_multiplier,
        sup_u,
        sup_v,
        non_unique_nodes,
        bound,
        k_phi,
        tol_stat,
        tol_comp,
        verdict,
    })
}

/// Necessary conditions without constraints: `∇φ = 0` and `∇²φ ⪯ 0` at
/// every node.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedCertificate {
    pub max_gradient_norm: f64,
    pub worst_gradient_node: usize,
    pub max_eigenvalue: f64,
    pub worst_eigenvalue_node: usize,
    pub tol_stat: f64,
    pub first_order_pass: bool,
    pub second_order_pass: bool,
}

impl UnconstrainedCertificate {
    pub fn passed(&self) -> bool {
        self.first_order_pass && self.second_order_pass
    }
}

pub fn unconstrained_certificate(
    problem: &Problem,
    trajectory: &Trajectory,
    opts: &CertifyOptions,
) -> Result<UnconstrainedCertificate, CertifyError> {
    if problem.p() + problem.m() > 0 {
        return Err(CertifyError::Precondition(
            "unconstrained certificate called on a constrained problem".into(),
        ));
    }
    let nodes = evaluate_nodes(problem, trajectory, 0.0)?;
    let mut max_gradient_norm = 0.0f64;
    let mut worst_gradient_node = 0;
    let mut max_eigenvalue = f64::NEG_INFINITY;
    let mut worst_eigenvalue_node = 0;
    let mut second_order_pass = true;
    for (k, pe) in nodes.iter().enumerate() {
        let gn = pe.grad_phi.norm();
        if gn > max_gradient_norm {
            max_gradient_norm = gn;
            worst_gradient_node = k;
        }
        let eig = max_eig_sym(&pe.hess_phi)?;
        if eig > max_eigenvalue {
            max_eigenvalue = eig;
            worst_eigenvalue_node = k;
        }
        if eig > opts.psd_rel * (1.0 + pe.hess_phi.norm()) {
            second_order_pass = false;
        }
    }
    let tol_stat = opts.stat_rel * (1.0 + max_gradient_norm);
    Ok(UnconstrainedCertificate {
        max_gradient_norm,
        worst_gradient_node,
        max_eigenvalue,
        worst_eigenvalue_node,
        tol_stat,
        first_order_pass: max_gradient_norm <= tol_stat,
        second_order_pass,
    })
}
