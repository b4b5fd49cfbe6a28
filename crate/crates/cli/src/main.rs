//! `ctkkt`: check, solve and self-test continuous-time programs.
//!
//! Exit codes: 0 certified, 1 usage or I/O error, 2 constraint
//! qualification failed, 3 first-order conditions failed, 4 refuted,
//! 5 infeasible, 6 solver failure, 7 second-order condition failed,
//! 8 self-test failure.

mod report;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use ctkkt::certify::{first_order_certificate, CertifyOptions};
use ctkkt::expr::{parse_expr, DerivativeFault};
use ctkkt::improve::{refute_optimality, RefuteOptions};
use ctkkt::model::{build_grid, load_problem, objective_value, Problem, Trajectory};
use ctkkt::selftest::{run_selftest, SelftestOptions};
use ctkkt::soc::{integral_cross_check, second_order_certificate};
use ctkkt::solver::{certified_solve, SolveOptions};

use report::{build_document, render_text, Inputs, SolveBlock};

const EXIT_USAGE: u8 = 1;
const EXIT_SOLVER: u8 = 6;
const EXIT_SELFTEST: u8 = 8;

#[derive(Parser)]
#[command(name = "ctkkt", version, about = "KKT certificates for continuous-time programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify or refute the candidate trajectory of a problem file.
    Check {
        file: PathBuf,
        /// Comma-separated candidate components, expressions in t.
        #[arg(long)]
        candidate: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Solve pointwise, write the trajectory as CSV, then certify it.
    Solve {
        file: PathBuf,
        /// CSV output path [default: <file stem>.trajectory.csv].
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random starts per node.
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run the randomized derivative, bound and direction sweeps.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Args)]
struct Common {
    /// Number of grid nodes.
    #[arg(long, default_value_t = 201)]
    grid: usize,
    /// Relative stationarity tolerance (scaled by 1 + sup |∇φ|).
    #[arg(long, default_value_t = 1e-7)]
    tol_stat: f64,
    /// Relative second-order tolerance (scaled by 1 + ‖H‖ per node).
    #[arg(long, default_value_t = 1e-8)]
    tol_psd: f64,
    /// Floor on the Gram-determinant infimum.
    #[arg(long, default_value_t = 1e-8)]
    kmin: f64,
    /// Absolute active-set band [default: 1e-6 (1 + max |g|)].
    #[arg(long)]
    eps_act: Option<f64>,
    /// Feasibility tolerance for both |h| and -g.
    #[arg(long, default_value_t = 1e-8)]
    tol_feas: f64,
    /// Nodes whose multipliers are included in the report.
    #[arg(long, value_delimiter = ',')]
    sample_nodes: Option<Vec<usize>>,
    /// Seed for the sampled integral check.
    #[arg(long, default_value_t = 0)]
    sample_seed: u64,
    /// Print the JSON certificate instead of the text report.
    #[arg(long)]
    json: bool,
}

impl Common {
    fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            tol_eq: self.tol_feas,
            tol_ineq: self.tol_feas,
            eps_act: self.eps_act,
            k_min: self.kmin,
            stat_rel: self.tol_stat,
            psd_rel: self.tol_psd,
            ..CertifyOptions::default()
        }
    }

    fn samples(&self) -> Vec<usize> {
        self.sample_nodes
            .clone()
            .unwrap_or_else(|| vec![0, self.grid / 2, self.grid.saturating_sub(1)])
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    ProductRule,
    SineSign,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn load(file: &Path) -> Result<(ctkkt::model::ProblemFile, String), Failure> {
    let bytes = fs::read(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let sha = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let text = String::from_utf8(bytes).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let parsed = load_problem(&text).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    Ok((parsed, sha))
}

fn candidate_exprs(list: &str, n: usize) -> Result<Vec<ctkkt::expr::Expr>, Failure> {
    let parts: Vec<&str> = list.split(',').collect();
    if parts.len() != n {
        return Err(usage(format!(
            "--candidate has {} components, problem has n = {n}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|s| parse_expr(s, 0).map_err(|e| usage(format!("--candidate {s:?}: {e}"))))
        .collect()
}

fn emit(doc: &report::CertificateDocument, json: bool) -> Result<(), Failure> {
    let text = if json {
        serde_json::to_string_pretty(doc).map_err(|e| usage(e.to_string()))? + "\n"
    } else {
        render_text(doc)
    };
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| usage(e.to_string()))
}

/// Certify, and on any failure of a feasible trajectory try to refute.
fn certify_and_report(
    problem: &Problem,
    sha256: String,
    trajectory: &Trajectory,
    common: &Common,
    solve: Option<SolveBlock>,
) -> Result<u8, Failure> {
    let opts = common.certify_options();
    let fail = |e: &dyn std::fmt::Display| usage(e.to_string());
    let first = first_order_certificate(problem, trajectory, &opts).map_err(|e| fail(&e))?;
    let (second, integral) = match &first.multipliers {
        Some(mult) => {
            let s = second_order_certificate(problem, trajectory, mult, &opts).map_err(|e| fail(&e))?;
            let i = integral_cross_check(problem, trajectory, mult, &opts, 100, common.sample_seed)
                .map_err(|e| fail(&e))?;
            (Some(s), Some(i))
        }
        None => (None, None),
    };
    let certified = first.passed() && second.as_ref().is_some_and(|s| s.pass);
    let refutation = if certified || !first.feasibility.pass {
        None
    } else {
        let ropts = RefuteOptions {
            certify: opts.clone(),
            ..RefuteOptions::default()
        };
        refute_optimality(problem, trajectory, &ropts).map_err(|e| fail(&e))?
    };
    let objective = objective_value(problem, trajectory).map_err(|e| fail(&e))?;
    let samples = common.samples();
    let doc = build_document(Inputs {
        problem,
        sha256,
        trajectory,
        objective,
        options: &opts,
        first: &first,
        second: second.as_ref(),
        integral: integral.as_ref(),
        refutation: refutation.as_ref(),
        samples: &samples,
        solve,
    });
    emit(&doc, common.json)?;
    Ok(doc.verdict.exit_code() as u8)
}

fn check(file: &Path, candidate: Option<&str>, common: &Common) -> Result<u8, Failure> {
    let (parsed, sha) = load(file)?;
    let problem = &parsed.problem;
    let exprs = match candidate {
        Some(list) => candidate_exprs(list, problem.n())?,
        None => parsed
            .candidate
            .clone()
            .ok_or_else(|| usage("no candidate in the problem file; pass --candidate"))?,
    };
    let grid = build_grid(problem.horizon(), common.grid).map_err(|e| usage(e.to_string()))?;
    let trajectory = Trajectory::from_exprs(grid, exprs).map_err(|e| usage(e.to_string()))?;
    certify_and_report(problem, sha, &trajectory, common, None)
}

fn write_csv(path: &Path, solution: &ctkkt::solver::CertifiedSolution) -> Result<(), Failure> {
    let tr = &solution.trajectory;
    let n = tr.dim();
    let mult = solution.first_order.multipliers.as_ref();
    let (p, m) = mult.map_or((0, 0), |mu| {
        (
            mu.u.first().map_or(0, |u| u.len()),
            mu.v.first().map_or(0, |v| v.len()),
        )
    });
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("z{i}")));
    header.extend((1..=p).map(|i| format!("u{i}")));
    header.extend((1..=m).map(|j| format!("v{j}")));
    let mut out = header.join(",") + "\n";
    for (k, t) in tr.grid().nodes().iter().enumerate() {
        let mut row = vec![format!("{t:?}")];
        row.extend(tr.row(k).iter().map(|x| format!("{x:?}")));
        if let Some(mu) = mult {
            row.extend(mu.u[k].iter().map(|x| format!("{x:?}")));
            row.extend(mu.v[k].iter().map(|x| format!("{x:?}")));
        }
        out += &(row.join(",") + "\n");
    }
    fs::write(path, out).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn solve(
    file: &Path,
    output: Option<&Path>,
    seed: u64,
    starts: usize,
    common: &Common,
) -> Result<u8, Failure> {
    let (parsed, sha) = load(file)?;
    let problem = &parsed.problem;
    let grid = build_grid(problem.horizon(), common.grid).map_err(|e| usage(e.to_string()))?;
    let sopts = SolveOptions {
        seed,
        starts,
        ..SolveOptions::default()
    };
    let ropts = RefuteOptions {
        certify: common.certify_options(),
        ..RefuteOptions::default()
    };
    let solution = certified_solve(problem, &grid, &sopts, &ropts).map_err(|e| Failure {
        code: EXIT_SOLVER,
        message: e.to_string(),
    })?;
    let csv = output.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = file.file_stem().map_or("problem".into(), |s| s.to_string_lossy());
        PathBuf::from(format!("{stem}.trajectory.csv"))
    });
    write_csv(&csv, &solution)?;
    certify_and_report(
        problem,
        sha,
        &solution.trajectory,
        common,
        Some(SolveBlock {
            csv: csv.display().to_string(),
            starts,
            seed,
        }),
    )
}

fn selftest(seed: u64, fault: Option<Fault>) -> u8 {
    let opts = SelftestOptions {
        seed,
        fault: fault.map(|f| match f {
            Fault::ProductRule => DerivativeFault::ProductRuleSign,
            Fault::SineSign => DerivativeFault::SineSign,
        }),
        ..SelftestOptions::default()
    };
    let results = run_selftest(&opts);
    for r in &results {
        println!(
            "{:<4} {:<42} {:>4} cases  {:>3} failures  worst {:.3e} (tol {:.0e})",
            if r.pass() { "ok" } else { "FAIL" },
            r.name,
            r.cases,
            r.failures,
            r.worst,
            r.tolerance
        );
    }
    if results.iter().all(|r| r.pass()) {
        0
    } else {
        EXIT_SELFTEST
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Check {
            file,
            candidate,
            common,
        } => check(file, candidate.as_deref(), common),
        Command::Solve {
            file,
            output,
            seed,
            starts,
            common,
        } => solve(file, output.as_deref(), *seed, *starts, common),
        Command::Selftest { seed, inject_fault } => Ok(selftest(*seed, *inject_fault)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("ctkkt: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
