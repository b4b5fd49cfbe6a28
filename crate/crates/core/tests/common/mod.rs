#![allow(dead_code)]

use ctkkt::expr::{parse_expr, Expr};
use ctkkt::model::{build_grid, Problem, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn problem(n: usize, objective: &str, eq: &[&str], ineq: &[&str]) -> Problem {
    let parse = |s: &str| parse_expr(s, n).unwrap();
    Problem::new(
        "fixture",
        n,
        1.0,
        parse(objective),
        eq.iter().map(|s| parse(s)).collect(),
        ineq.iter().map(|s| parse(s)).collect(),
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

/// `φ = z1`, `g = z1`, candidate 0: the bound binds with multiplier -1.
pub fn negative_multiplier() -> Problem {
    problem(1, "z1", &[], &["z1"])
}

pub fn constant(problem: &Problem, nodes: usize, z: &[f64]) -> Trajectory {
    Trajectory::constant(build_grid(problem.horizon(), nodes).unwrap(), z)
}

/// Linear constraints through `z0` and a concave quadratic objective
/// `c·z - ½‖z‖²`; `slack[j] == 0` makes inequality `j` binding at `z0`.
pub fn linear_problem(
    z0: &[f64],
    c: &[f64],
    eq_rows: &[Vec<f64>],
    ineq_rows: &[Vec<f64>],
    slack: &[f64],
) -> Problem {
    let n = z0.len();
    let affine = |row: &[f64], offset: f64| {
        let mut e = Expr::constant(offset);
        for (i, (&a, &z)) in row.iter().zip(z0).enumerate() {
            e = e.add(Expr::constant(a).mul(Expr::z(i).sub(Expr::constant(z))));
        }
        e
    };
    let mut objective = Expr::constant(0.0);
    for (i, &ci) in c.iter().enumerate() {
        objective = objective
            .add(Expr::constant(ci).mul(Expr::z(i)))
            .sub(Expr::constant(0.5).mul(Expr::z(i).pow(2.0)));
    }
    Problem::new(
        "linear",
        n,
        1.0,
        objective,
        eq_rows.iter().map(|r| affine(r, 0.0)).collect(),
        ineq_rows.iter().zip(slack).map(|(r, &s)| affine(r, s)).collect(),
    )
    .unwrap()
}

pub struct LinearCase {
    pub problem: Problem,
    pub z0: Vec<f64>,
    /// Indices of the inequalities binding at `z0`.
    pub active: Vec<usize>,
}

/// Random instance of [`linear_problem`]. With `stationary`, the objective
/// is chosen so that `z0` is a KKT point with equality multipliers in
/// `[-1, 1]` and active inequality multipliers in `[0.1, 2]`; being concave
/// with linear constraints, `z0` is then a global maximizer.
pub fn random_linear_case(rng: &mut ChaCha8Rng, stationary: bool) -> LinearCase {
    use rand::Rng;
    let n = rng.random_range(1..=4);
    let p = rng.random_range(0..n);
    let m = rng.random_range(0..=3);
    let row = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eq: Vec<Vec<f64>> = (0..p).map(|_| row(rng)).collect();
    let ineq: Vec<Vec<f64>> = (0..m).map(|_| row(rng)).collect();
    let slack: Vec<f64> = (0..m)
        .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.2..1.0) })
        .collect();
    let active: Vec<usize> = (0..m).filter(|&j| slack[j] == 0.0).collect();
    let c: Vec<f64> = if stationary {
        let mut c = z0.clone();
        for a in &eq {
            let u = rng.random_range(-1.0..1.0);
            c.iter_mut().zip(a).for_each(|(ci, ai)| *ci -= u * ai);
        }
        for &j in &active {
            let v = rng.random_range(0.1..2.0);
            c.iter_mut().zip(&ineq[j]).for_each(|(ci, bi)| *ci -= v * bi);
        }
        c
    } else {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    LinearCase {
        problem: linear_problem(&z0, &c, &eq, &ineq, &slack),
        z0,
        active,
    }
}
