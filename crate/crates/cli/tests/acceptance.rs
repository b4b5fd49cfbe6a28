//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p ctkkt-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ctkkt::certify::{check_h7, equality_multipliers, first_order_certificate, CertifyOptions};
use ctkkt::expr::parse_expr;
use ctkkt::improve::{increase_direction, refute_optimality, RefuteOptions};
use ctkkt::linalg::inverse_norm_bound;
use ctkkt::model::{
    build_grid, check_feasibility, load_problem, objective_value, Problem, Trajectory,
};
use ctkkt::selftest::{derivative_sweep, random_regular_point, synthetic_point, SelftestOptions};
use ctkkt::soc::{integral_cross_check, second_order_certificate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("example-1 reproduction", example1_reproduction),
        ("example-2 reproduction", example2_reproduction),
        ("solver reproduction", solver_reproduction),
        ("equality multiplier formula", equality_formula),
        ("inverse norm bound", inverse_bound),
        ("increase direction conditions", increase_direction_conditions),
        ("refutation soundness", refutation_soundness),
        ("derivative correctness", derivative_correctness),
        ("second-order integral cross-check", soc_integral),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {}", panic_message(&e))));
        match outcome {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail}", i + 1);
            }
        }
    }
    let _ = std::fs::remove_dir_all(scratch_root());
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn problem_path(name: &str) -> PathBuf {
    root().join("problems").join(name)
}

fn load(name: &str) -> (Problem, Trajectory) {
    let text = std::fs::read_to_string(problem_path(name)).unwrap();
    let file = load_problem(&text).unwrap();
    let grid = build_grid(file.problem.horizon(), 201).unwrap();
    let traj = Trajectory::from_exprs(grid, file.candidate.unwrap()).unwrap();
    (file.problem, traj)
}

struct Run {
    code: i32,
    json: Value,
    elapsed: Duration,
}

fn ctkkt(args: &[&str], dir: &Path) -> Run {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ctkkt"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    let json = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "ctkkt {args:?}: {e}\nstderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    });
    Run {
        code: out.status.code().unwrap_or(-1),
        json,
        elapsed,
    }
}

fn num(v: &Value, path: &str) -> f64 {
    v.pointer(path)
        .and_then(Value::as_f64)
        .unwrap_or_else(|| panic!("{path} missing or not a number"))
}

fn scratch_root() -> PathBuf {
    std::env::temp_dir().join(format!("ctkkt-acceptance-{}", std::process::id()))
}

fn scratch(name: &str) -> PathBuf {
    let dir = scratch_root().join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// `det(ΥΥᵀ)` for Example 1 at the origin, by hand: `Υ` has rows
/// `(1, -1, 0, 0)`, `(1, 0, 0, 0)`, `(0, 0, 0, -2)`, so `ΥΥᵀ` is
/// `[[2, 1, 0], [1, 1, 0], [0, 0, 4]]`.
fn example1_gram_det() -> f64 {
    let a = [[2.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 4.0]];
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn example1_reproduction() -> Result<String, String> {
    let dir = scratch("ex1");
    let ex1 = problem_path("ex1.ctp");
    let run = ctkkt(&["check", ex1.to_str().unwrap(), "--json"], &dir);
    let d = &run.json;
    ensure(run.code == 0, || format!("exit code {}", run.code))?;
    ensure(d["verdict"] == "certified", || format!("verdict {}", d["verdict"]))?;
    ensure(run.elapsed < Duration::from_secs(5), || format!("took {:?}", run.elapsed))?;
    ensure(num(d, "/grid/nodes") == 201.0, || "grid is not 201 nodes".into())?;

    let eq = num(d, "/feasibility/max_eq_violation");
    let ineq = num(d, "/feasibility/min_ineq");
    ensure(eq == 0.0 && ineq >= 0.0, || format!("residuals |h| {eq}, min g {ineq}"))?;

    let expected = example1_gram_det();
    let inf = num(d, "/cq/h7/infimum");
    ensure((inf - expected).abs() <= 1e-9, || format!("H7 infimum {inf}, expected {expected}"))?;
    ensure(d["cq"]["h7"]["pass"] == true, || "H7 not passed".into())?;

    let (sup_u, sup_v) = (num(d, "/first_order/sup_u"), num(d, "/first_order/sup_v"));
    ensure(sup_u == 0.0 && sup_v == 0.0, || format!("sup|u| {sup_u}, sup|v| {sup_v}"))?;
    let stat = num(d, "/first_order/max_stationarity");
    ensure(stat <= 1e-10, || format!("stationarity {stat:e}"))?;
    let comp = num(d, "/first_order/max_complementarity");
    ensure(comp == 0.0, || format!("complementarity {comp:e}"))?;

    let dims = d["second_order"]["tangent_dims"].as_array().unwrap();
    ensure(dims.len() == 201 && dims.iter().all(|k| k == 0), || {
        "tangent dimension not 0 at every node".into()
    })?;
    ensure(d["second_order"]["pass"] == true, || "second order not passed".into())?;
    Ok(format!(
        "certified in {:.2?}; det(ΥΥᵀ) = {inf} (hand value {expected}); u, v ≡ 0; stationarity {stat}; \
         complementarity {comp}; tangent dim 0 at 201/201 nodes",
        run.elapsed
    ))
}

fn example2_reproduction() -> Result<String, String> {
    let dir = scratch("ex2");
    let ex2 = problem_path("ex2.ctp");
    let run = ctkkt(&["check", ex2.to_str().unwrap(), "--json"], &dir);
    ensure(run.code == 2, || format!("exit code {}", run.code))?;
    ensure(run.elapsed < Duration::from_secs(5), || format!("took {:?}", run.elapsed))?;
    ensure(run.json["verdict"] == "cq_failed", || format!("verdict {}", run.json["verdict"]))?;

    let (problem, traj) = load("ex2.ctp");
    let h7 = check_h7(&problem, &traj, &CertifyOptions::default()).map_err(|e| e.to_string())?;
    let worst_det = h7.nodes.iter().map(|n| n.det).fold(0.0, f64::max);
    ensure(h7.nodes.iter().all(|n| n.rank == 2 && n.rows == 3), || {
        "rank differs from 2 at some node".into()
    })?;
    ensure(worst_det <= 1e-12, || format!("det(ΥΥᵀ) up to {worst_det:e}"))?;
    ensure(!h7.pass, || "H7 reported as passing".into())?;
    Ok(format!(
        "exit 2 in {:.2?}; rank 2 of 3 at {}/{} nodes; max det(ΥΥᵀ) {worst_det:e}",
        run.elapsed,
        h7.nodes.len(),
        traj.grid().len()
    ))
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn solver_reproduction() -> Result<String, String> {
    let mut details = Vec::new();
    for (file, target, code) in [("ex1.ctp", vec![0.0, 0.0], 0), ("ex2.ctp", vec![1.0, 1.0, 1.0], 2)] {
        let dir = scratch(&format!("solve-{file}"));
        let path = problem_path(file);
        let mut csvs = Vec::new();
        for name in ["a.csv", "b.csv"] {
            let run = ctkkt(
                &["solve", path.to_str().unwrap(), "-o", name, "--seed", "0", "--json"],
                &dir,
            );
            ensure(run.code == code, || format!("{file}: exit code {}", run.code))?;
            ensure(run.elapsed < Duration::from_secs(30), || {
                format!("{file}: took {:?}", run.elapsed)
            })?;
            let obj = num(&run.json, "/objective");
            ensure(obj.abs() <= 1e-6, || format!("{file}: objective {obj:e}"))?;
            details.push(format!("{file} {:.2?}", run.elapsed));
            csvs.push(std::fs::read(dir.join(name)).unwrap());
        }
        ensure(csvs[0] == csvs[1], || format!("{file}: runs differ"))?;
        let rows = read_csv(&dir.join("a.csv"));
        ensure(rows.len() == 201, || format!("{file}: {} rows", rows.len()))?;
        let dist = rows
            .iter()
            .flat_map(|r| r[1..=target.len()].iter().zip(&target).map(|(z, t)| (z - t).abs()))
            .fold(0.0, f64::max);
        ensure(dist <= 1e-4, || format!("{file}: ‖z - z̄‖∞ = {dist:e}"))?;
        details.push(format!("‖z - z̄‖∞ {dist:.1e}"));
    }
    Ok(format!("{}; both runs byte-identical", details.join(", ")))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Random `p × n` Jacobian whose singular values lie in `[0.5, 2]`.
fn conditioned_jacobian(rng: &mut ChaCha8Rng, p: usize, n: usize) -> DMatrix<f64> {
    let q1 = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let q2 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let mut s = DMatrix::zeros(p, n);
    for i in 0..p {
        s[(i, i)] = rng.random_range(0.5..2.0);
    }
    q1 * s * q2.transpose()
}

fn equality_formula() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_res, mut worst_diff) = (0.0f64, 0.0f64);
    for case in 0..200 {
        let n = rng.random_range(1..=6);
        let p = rng.random_range(1..=n);
        let jac_h = conditioned_jacobian(&mut rng, p, n);
        // Stationary instances: ∇φ in the row space of ∇h.
        let w = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let grad_phi = jac_h.transpose() * w;
        let pe = synthetic_point(grad_phi.clone(), jac_h.clone(), DVector::zeros(0), DMatrix::zeros(0, n), 0.0);
        let u = equality_multipliers(&pe).map_err(|e| e.to_string())?;

        let res = (&grad_phi + jac_h.transpose() * &u).norm() / (1.0 + grad_phi.norm());
        worst_res = worst_res.max(res);

        // (∇h ∇hᵀ) u = -∇h ∇φ
        let gram = &jac_h * jac_h.transpose();
        let rhs = -(&jac_h * &grad_phi);
        let a: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| gram[(i, j)]).collect()).collect();
        let direct = DVector::from_vec(gauss_solve(a, rhs.iter().copied().collect()));
        let diff = (&u - &direct).norm() / direct.norm().max(f64::MIN_POSITIVE);
        worst_diff = worst_diff.max(diff);
        ensure(res <= 1e-9 && diff <= 1e-9, || {
            format!("case {case}: residual {res:e}, relative difference {diff:e}")
        })?;
    }
    Ok(format!(
        "200 cases; worst relative residual {worst_res:.1e}, worst difference from elimination {worst_diff:.1e}"
    ))
}

fn inverse_bound() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < 500 {
        let p = rng.random_range(1..=6);
        let mut a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let det = a.determinant();
        if det == 0.0 {
            continue;
        }
        if det < 0.0 {
            a.row_mut(0).neg_mut();
        }
        let sv = a.clone().svd(false, false).singular_values;
        let k = det.abs() * rng.random_range(0.5..1.0);
        let l = sv.max() * rng.random_range(1.0..1.5);
        let inverse_norm = a.try_inverse().unwrap().svd(false, false).singular_values.max();
        let bound = inverse_norm_bound(k, l, p).map_err(|e| e.to_string())?;
        ensure(inverse_norm <= bound, || format!("p = {p}: ‖A⁻¹‖ = {inverse_norm} > {bound}"))?;
        worst = worst.max(inverse_norm / bound);
        cases += 1;
    }
    Ok(format!("500 cases, 0 violations; largest ‖A⁻¹‖ / bound = {worst:.4}"))
}

fn increase_direction_conditions() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let (pe, k) = random_regular_point(&mut rng);
        let gamma = increase_direction(&pe, k, 0.0).map_err(|e| format!("case {case}: {e}"))?;
        let dot = |row: nalgebra::DVectorView<f64>| -> f64 { row.iter().zip(gamma.iter()).map(|(a, b)| a * b).sum() };
        let mut v = 0.0f64;
        for i in 0..pe.p() {
            v = v.max(dot(pe.jac_h.row(i).transpose().as_view()).abs());
        }
        for &j in &pe.active {
            let target = if j == k { 1.0 } else { 0.0 };
            v = v.max((dot(pe.jac_g.row(j).transpose().as_view()) - target).abs());
        }
        worst = worst.max(v);
        ensure(v <= 1e-9, || format!("case {case}: violation {v:e}"))?;
    }
    Ok(format!("200 cases; max violation {worst:.1e}"))
}

fn refutation_soundness() -> Result<String, String> {
    let opts = RefuteOptions::default();
    let mut details = Vec::new();

    let (ex1, _) = load("ex1.ctp");
    let negative = {
        let text = std::fs::read_to_string(problem_path("negative-multiplier.ctp")).unwrap();
        load_problem(&text).unwrap().problem
    };
    let grid = build_grid(1.0, 201).unwrap();
    for (name, problem, z, min_gain) in [
        ("example 1 at (1,1)", &ex1, vec![1.0, 1.0], 0.5),
        ("negative multiplier", &negative, vec![0.0], 0.9 * negative.horizon()),
    ] {
        let traj = Trajectory::constant(grid.clone(), &z);
        let w = refute_optimality(problem, &traj, &opts)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("{name}: no witness"))?;
        let report = check_feasibility(problem, &w.improved, 1e-8, 1e-8).unwrap();
        let gain = objective_value(problem, &w.improved).unwrap() - objective_value(problem, &traj).unwrap();
        ensure(report.pass, || format!("{name}: improved trajectory infeasible"))?;
        ensure(gain >= min_gain, || format!("{name}: gain {gain} < {min_gain}"))?;
        details.push(format!("{name}: ΔP = {gain:.3}"));
    }

    // Every certified fixture, plus the optimum of Example 2, must survive.
    let ex1_solved = ctkkt::solver::solve_trajectory(&ex1, &grid, &Default::default())
        .unwrap()
        .trajectory;
    let (ex2, ex2_traj) = load("ex2.ctp");
    let survivors = [
        ("example 1 candidate", &ex1, Trajectory::constant(grid.clone(), &[0.0, 0.0])),
        ("example 1 solved", &ex1, ex1_solved),
        ("example 2 candidate", &ex2, ex2_traj),
    ];
    let mut false_refutations = 0;
    for (name, problem, traj) in &survivors {
        let cert = first_order_certificate(problem, traj, &opts.certify).map_err(|e| e.to_string())?;
        if refute_optimality(problem, traj, &opts).map_err(|e| e.to_string())?.is_some() {
            false_refutations += 1;
            details.push(format!("{name} refuted (first order {:?})", cert.verdict));
        }
    }
    ensure(false_refutations == 0, || details.join("; "))?;
    details.push(format!("0 false refutations over {} optimal fixtures", survivors.len()));
    Ok(details.join("; "))
}

fn derivative_correctness() -> Result<String, String> {
    let opts = SelftestOptions {
        seed: 8,
        ..SelftestOptions::default()
    };
    let (grad, hess) = derivative_sweep(&opts);
    for r in [&grad, &hess] {
        ensure(r.cases == 1000 && r.pass(), || {
            format!("{}: {} failures, worst {:e}", r.name, r.failures, r.worst)
        })?;
    }
    Ok(format!(
        "1000 cases; worst gradient error {:.1e}, worst Hessian error {:.1e}; Hessians symmetric",
        grad.worst, hess.worst
    ))
}

fn soc_integral() -> Result<String, String> {
    let parse = |s: &str| parse_expr(s, 2).unwrap();
    let problem = Problem::new("reduced", 2, 1.0, parse("-z1^2 - z2^2"), vec![parse("z1 - z2")], vec![])
        .unwrap();
    let grid = build_grid(1.0, 201).unwrap();
    let traj = Trajectory::constant(grid.clone(), &[0.0, 0.0]);
    let opts = CertifyOptions::default();
    let first = first_order_certificate(&problem, &traj, &opts).map_err(|e| e.to_string())?;
    let mult = first.multipliers.ok_or("no multipliers")?;
    let soc = second_order_certificate(&problem, &traj, &mult, &opts).map_err(|e| e.to_string())?;
    ensure((soc.worst_eigenvalue + 2.0).abs() <= 1e-9, || {
        format!("worst eigenvalue {}", soc.worst_eigenvalue)
    })?;

    let check = integral_cross_check(&problem, &traj, &mult, &opts, 100, 9).map_err(|e| e.to_string())?;
    ensure(check.samples == 100 && check.max_integral <= 1e-9, || {
        format!("max ∫γᵀHγ = {:e}", check.max_integral)
    })?;

    // Independent sampling: γ(t) = c(t)·(1, 1)/√2, H = -2I, so γᵀHγ = -2c².
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut own_max = f64::NEG_INFINITY;
    let h = 1.0 / 200.0;
    for _ in 0..100 {
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&t| {
                let coef: f64 = a + b * (std::f64::consts::PI * t).cos() + c * (2.0 * std::f64::consts::PI * t).sin();
                let gamma = [coef / 2f64.sqrt(), coef / 2f64.sqrt()];
                -2.0 * (gamma[0] * gamma[0] + gamma[1] * gamma[1])
            })
            .collect();
        let integral = h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[values.len() - 1]));
        own_max = own_max.max(integral);
    }
    ensure(own_max <= 1e-9, || format!("independent max ∫γᵀHγ = {own_max:e}"))?;
    Ok(format!(
        "worst eigenvalue {}; 100 samples max ∫γᵀHγ = {:.3e} (independent sampling {:.3e})",
        soc.worst_eigenvalue, check.max_integral, own_max
    ))
}
