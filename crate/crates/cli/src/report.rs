//! The certificate document shared by the JSON and text reports.

use std::fmt::Write as _;

use serde::Serialize;

use ctkkt::certify::{CertifyOptions, CqReport, FirstOrderCertificate, FirstOrderVerdict};
use ctkkt::improve::{DirectionSource, RefutationWitness};
use ctkkt::model::{FeasibilityReport, Problem, Trajectory};
use ctkkt::soc::{IntegralCheck, SecondOrderCertificate, SocNodeStatus};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    CqFailed,
    FirstOrderFailed,
    SecondOrderFailed,
    Refuted,
    Infeasible,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Certified => 0,
            Verdict::CqFailed => 2,
            Verdict::FirstOrderFailed => 3,
            Verdict::Refuted => 4,
            Verdict::Infeasible => 5,
            Verdict::SecondOrderFailed => 7,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::CqFailed => "cq_failed",
            Verdict::FirstOrderFailed => "first_order_failed",
            Verdict::SecondOrderFailed => "second_order_failed",
            Verdict::Refuted => "refuted",
            Verdict::Infeasible => "infeasible",
        }
    }
}

/// Infeasible beats a refutation, which beats every certificate failure.
pub fn verdict(
    first: &FirstOrderCertificate,
    second: Option<&SecondOrderCertificate>,
    refutation: Option<&RefutationWitness>,
) -> Verdict {
    if !first.feasibility.pass {
        Verdict::Infeasible
    } else if refutation.is_some() {
        Verdict::Refuted
    } else {
        match first.verdict {
            FirstOrderVerdict::Infeasible => Verdict::Infeasible,
            FirstOrderVerdict::CqFailed => Verdict::CqFailed,
            FirstOrderVerdict::NotStationary | FirstOrderVerdict::NegativeMultiplier => {
                Verdict::FirstOrderFailed
            }
            FirstOrderVerdict::Pass if second.is_some_and(|s| s.pass) => Verdict::Certified,
            FirstOrderVerdict::Pass => Verdict::SecondOrderFailed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
    pub format: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemBlock {
    pub name: String,
    pub sha256: String,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridBlock {
    pub nodes: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptionsBlock {
    pub tol_eq: f64,
    pub tol_ineq: f64,
    pub eps_act: f64,
    pub k_min: f64,
    pub tol_sign: f64,
    pub tol_stat_rel: f64,
    pub tol_psd_rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Worst {
    pub index: usize,
    pub node: usize,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityBlock {
    pub pass: bool,
    pub max_eq_violation: f64,
    /// `null` without inequalities.
    pub min_ineq: Option<f64>,
    pub eq_worst: Vec<Worst>,
    pub ineq_worst: Vec<Worst>,
    pub tol_eq: f64,
    pub tol_ineq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CqBlock {
    pub kind: &'static str,
    pub pass: bool,
    /// `null` when the checked matrix has no rows.
    pub infimum: Option<f64>,
    pub worst_node: Option<usize>,
    pub worst_t: Option<f64>,
    pub min_rank: usize,
    pub required_rank: usize,
    pub k_min: f64,
    pub det: Vec<f64>,
    pub active_counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CqSection {
    pub h4: CqBlock,
    pub h7: Option<CqBlock>,
    pub licq_active: Option<CqBlock>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplierSample {
    pub node: usize,
    pub t: f64,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub stationarity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundBlock {
    pub inverse_norm: f64,
    pub k0: f64,
    pub k_phi: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderBlock {
    pub pass: bool,
    pub status: &'static str,
    pub max_stationarity: f64,
    pub tol_stat: f64,
    pub max_complementarity: f64,
    pub tol_comp: f64,
    /// `null` without inequalities.
    pub min_multiplier: Option<f64>,
    pub tol_sign: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    pub k_phi: f64,
    pub non_unique_nodes: usize,
    pub bound: Option<BoundBlock>,
    pub samples: Vec<MultiplierSample>,
    pub assumed: Vec<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegralBlock {
    pub samples: usize,
    pub max_integral: f64,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondOrderBlock {
    pub pass: bool,
    /// `null` when every node is vacuous.
    pub worst_eigenvalue: Option<f64>,
    pub worst_node: Option<usize>,
    pub worst_t: Option<f64>,
    pub vacuous_nodes: usize,
    pub checked_nodes: usize,
    pub failed_nodes: usize,
    pub excluded_nodes: Vec<usize>,
    pub active_set_sensitive_nodes: Vec<usize>,
    pub tangent_dims: Vec<usize>,
    pub integral_check: Option<IntegralBlock>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefutationBlock {
    pub source: &'static str,
    /// One-based inequality index for multiplier-sign refutations.
    pub constraint: Option<usize>,
    pub support_nodes: usize,
    pub ascent: f64,
    pub step: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub gain: f64,
    pub improved_feasible: bool,
    pub direction_sup_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveBlock {
    pub csv: String,
    pub starts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateDocument {
    pub tool: Tool,
    pub problem: ProblemBlock,
    pub grid: GridBlock,
    pub options: OptionsBlock,
    pub objective: f64,
    pub feasibility: FeasibilityBlock,
    pub cq: CqSection,
    pub first_order: Option<FirstOrderBlock>,
    pub second_order: Option<SecondOrderBlock>,
    pub refutation: Option<RefutationBlock>,
    pub solve: Option<SolveBlock>,
    pub verdict: Verdict,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn feasibility_block(r: &FeasibilityReport) -> FeasibilityBlock {
    let worst = |v: &[ctkkt::model::NodeValue]| {
        v.iter()
            .enumerate()
            .map(|(i, w)| Worst {
                index: i + 1,
                node: w.node,
                t: w.t,
                value: w.value,
            })
            .collect()
    };
    FeasibilityBlock {
        pass: r.pass,
        max_eq_violation: r.max_eq_violation,
        min_ineq: finite(r.min_ineq),
        eq_worst: worst(&r.eq_worst),
        ineq_worst: worst(&r.ineq_worst),
        tol_eq: r.tol_eq,
        tol_ineq: r.tol_ineq,
    }
}

fn cq_block(r: &CqReport) -> CqBlock {
    CqBlock {
        kind: r.kind.label(),
        pass: r.pass,
        infimum: finite(r.infimum),
        worst_node: r.worst_node,
        worst_t: r.worst_t,
        min_rank: r.min_rank,
        required_rank: r.required_rank,
        k_min: r.k_min,
        det: r.nodes.iter().map(|n| n.det).collect(),
        active_counts: r.nodes.iter().map(|n| n.active_count).collect(),
    }
}

fn first_order_status(v: FirstOrderVerdict) -> &'static str {
    match v {
        FirstOrderVerdict::Pass => "pass",
        FirstOrderVerdict::Infeasible => "infeasible",
        FirstOrderVerdict::CqFailed => "cq_failed",
        FirstOrderVerdict::NotStationary => "not_stationary",
        FirstOrderVerdict::NegativeMultiplier => "negative_multiplier",
    }
}

fn first_order_block(
    c: &FirstOrderCertificate,
    trajectory: &Trajectory,
    samples: &[usize],
    tol_sign: f64,
) -> Option<FirstOrderBlock> {
    let mult = c.multipliers.as_ref()?;
    let samples = samples
        .iter()
        .filter(|&&k| k < trajectory.grid().len())
        .map(|&k| MultiplierSample {
            node: k,
            t: trajectory.grid().nodes()[k],
            z: trajectory.row(k).to_vec(),
            u: mult.u[k].iter().copied().collect(),
            v: mult.v[k].iter().copied().collect(),
            stationarity: c.stationarity[k],
        })
        .collect();
    Some(FirstOrderBlock {
        pass: c.passed(),
        status: first_order_status(c.verdict),
        max_stationarity: c.max_stationarity,
        tol_stat: c.tol_stat,
        max_complementarity: c.max_complementarity,
        tol_comp: c.tol_comp,
        min_multiplier: finite(c.min_multiplier),
        tol_sign,
        sup_u: c.sup_u,
        sup_v: c.sup_v,
        k_phi: c.k_phi,
        non_unique_nodes: c.non_unique_nodes.len(),
        bound: c.bound.as_ref().map(|b| BoundBlock {
            inverse_norm: b.inverse_norm,
            k0: b.k0,
            k_phi: b.k_phi,
            bound: b.bound,
            holds: b.holds,
        }),
        samples,
        assumed: vec![
            "objective and constraints are twice continuously differentiable",
            "derivative moduli are uniform in t",
        ],
    })
}

fn second_order_block(s: &SecondOrderCertificate, integral: Option<&IntegralCheck>) -> SecondOrderBlock {
    let count = |status| s.nodes.iter().filter(|n| n.status == status).count();
    SecondOrderBlock {
        pass: s.pass,
        worst_eigenvalue: finite(s.worst_eigenvalue),
        worst_node: s.worst_node,
        worst_t: s.worst_t,
        vacuous_nodes: count(SocNodeStatus::Vacuous),
        checked_nodes: count(SocNodeStatus::Pass) + count(SocNodeStatus::Fail),
        failed_nodes: count(SocNodeStatus::Fail),
        excluded_nodes: s.excluded_nodes.clone(),
        active_set_sensitive_nodes: s.sensitive_nodes.clone(),
        tangent_dims: s.nodes.iter().map(|n| n.tangent_dim).collect(),
        integral_check: integral.map(|i| IntegralBlock {
            samples: i.samples,
            max_integral: i.max_integral,
            max_ratio: i.max_ratio,
            bound: i.bound,
            pass: i.pass,
        }),
    }
}

fn refutation_block(w: &RefutationWitness) -> RefutationBlock {
    let (source, constraint, support_nodes) = match &w.source {
        DirectionSource::NegativeMultiplier { constraint, nodes } => {
            ("negative_multiplier", Some(constraint + 1), nodes.len())
        }
        DirectionSource::ProjectedGradient => (
            "projected_gradient",
            None,
            w.direction.iter().filter(|d| d.iter().any(|x| *x != 0.0)).count(),
        ),
    };
    RefutationBlock {
        source,
        constraint,
        support_nodes,
        ascent: w.ascent,
        step: w.step,
        objective_before: w.objective_before,
        objective_after: w.objective_after,
        gain: w.gain,
        improved_feasible: w.feasibility.pass,
        direction_sup_norm: w
            .direction
            .iter()
            .flatten()
            .fold(0.0f64, |a, x| a.max(x.abs())),
    }
}

/// Everything a report needs, gathered by the command before rendering.
pub struct Inputs<'a> {
    pub problem: &'a Problem,
    pub sha256: String,
    pub trajectory: &'a Trajectory,
    pub objective: f64,
    pub options: &'a CertifyOptions,
    pub first: &'a FirstOrderCertificate,
    pub second: Option<&'a SecondOrderCertificate>,
    pub integral: Option<&'a IntegralCheck>,
    pub refutation: Option<&'a RefutationWitness>,
    pub samples: &'a [usize],
    pub solve: Option<SolveBlock>,
}

pub fn build_document(i: Inputs) -> CertificateDocument {
    let c = i.first;
    CertificateDocument {
        tool: Tool {
            name: "ctkkt",
            version: env!("CARGO_PKG_VERSION"),
            format: FORMAT_VERSION,
        },
        problem: ProblemBlock {
            name: i.problem.name().to_string(),
            sha256: i.sha256,
            n: i.problem.n(),
            p: i.problem.p(),
            m: i.problem.m(),
            horizon: i.problem.horizon(),
        },
        grid: GridBlock {
            nodes: i.trajectory.grid().len(),
            horizon: i.trajectory.grid().horizon(),
        },
        options: OptionsBlock {
            tol_eq: i.options.tol_eq,
            tol_ineq: i.options.tol_ineq,
            eps_act: c.eps_act,
            k_min: i.options.k_min,
            tol_sign: i.options.tol_sign,
            tol_stat_rel: i.options.stat_rel,
            tol_psd_rel: i.options.psd_rel,
        },
        objective: i.objective,
        feasibility: feasibility_block(&c.feasibility),
        cq: CqSection {
            h4: cq_block(&c.h4),
            h7: c.h7.as_ref().map(cq_block),
            licq_active: c.licq.as_ref().map(cq_block),
        },
        first_order: first_order_block(c, i.trajectory, i.samples, i.options.tol_sign),
        second_order: i.second.map(|s| second_order_block(s, i.integral)),
        refutation: i.refutation.map(refutation_block),
        solve: i.solve,
        verdict: verdict(c, i.second, i.refutation),
    }
}

fn pass(flag: bool) -> &'static str {
    if flag {
        "pass"
    } else {
        "FAIL"
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6e}"))
}

fn cq_line(out: &mut String, b: &CqBlock) {
    let _ = write!(out, "{:<14}{}  inf det = {}", b.kind, pass(b.pass), opt(b.infimum));
    if let Some(t) = b.worst_t {
        let _ = write!(out, " at t = {t}");
    }
    let _ = writeln!(out, "  rank {}/{}", b.min_rank, b.required_rank);
}

/// Plain-text rendering of a document.
pub fn render_text(d: &CertificateDocument) -> String {
    let mut out = String::new();
    let p = &d.problem;
    let _ = writeln!(
        out,
        "{:<14}{} (n = {}, p = {}, m = {}, T = {})",
        "problem", p.name, p.n, p.p, p.m, p.horizon
    );
    let _ = writeln!(out, "{:<14}{} nodes", "grid", d.grid.nodes);
    let _ = writeln!(out, "{:<14}{:.12e}", "objective", d.objective);
    let f = &d.feasibility;
    let _ = writeln!(
        out,
        "{:<14}{}  max |h| = {:.3e}  min g = {}",
        "feasibility",
        pass(f.pass),
        f.max_eq_violation,
        opt(f.min_ineq)
    );
    cq_line(&mut out, &d.cq.h4);
    if let Some(b) = &d.cq.h7 {
        cq_line(&mut out, b);
    }
    if let Some(b) = &d.cq.licq_active {
        cq_line(&mut out, b);
    }
    if let Some(fo) = &d.first_order {
        let _ = writeln!(
            out,
            "{:<14}{}  stationarity {:.3e} (tol {:.1e})  complementarity {:.3e}  min v {}",
            "first order",
            fo.status,
            fo.max_stationarity,
            fo.tol_stat,
            fo.max_complementarity,
            opt(fo.min_multiplier)
        );
        let _ = writeln!(
            out,
            "{:<14}sup |u| = {:.6e}  sup |v| = {:.6e}{}",
            "multipliers",
            fo.sup_u,
            fo.sup_v,
            if fo.non_unique_nodes > 0 {
                format!("  (non-unique at {} nodes)", fo.non_unique_nodes)
            } else {
                String::new()
            }
        );
        if let Some(b) = &fo.bound {
            let _ = writeln!(
                out,
                "{:<14}{}  M K0 Kphi = {:.6e}",
                "bound",
                pass(b.holds),
                b.bound
            );
        }
    }
    if let Some(so) = &d.second_order {
        let _ = writeln!(
            out,
            "{:<14}{}  worst eigenvalue {}  ({} checked, {} vacuous, {} excluded)",
            "second order",
            pass(so.pass),
            opt(so.worst_eigenvalue),
            so.checked_nodes,
            so.vacuous_nodes,
            so.excluded_nodes.len()
        );
        if let Some(i) = &so.integral_check {
            let _ = writeln!(
                out,
                "{:<14}{}  max ∫γᵀHγ/sup|γ|² = {:.3e} over {} samples",
                "integral form",
                pass(i.pass),
                i.max_ratio,
                i.samples
            );
        }
    }
    if let Some(r) = &d.refutation {
        let _ = writeln!(
            out,
            "{:<14}{} direction, ascent {:.6e}, step {}, gain {:.6e}",
            "refutation", r.source, r.ascent, r.step, r.gain
        );
    }
    if let Some(s) = &d.solve {
        let _ = writeln!(out, "{:<14}{}", "trajectory", s.csv);
    }
    let _ = writeln!(out, "{:<14}{}", "verdict", d.verdict.label());
    out
}
