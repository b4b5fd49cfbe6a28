mod common;

use ctkkt::expr::{parse_expr, Expr};
use ctkkt::model::{build_grid, evaluate_point, integrate, load_problem, save_problem, Problem, ProblemFile};
use ctkkt::selftest::random_expr;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[test]
fn trapezoid_rule_converges_at_second_order() {
    let exact = -2.0 / 3.0;
    let mut scaled = Vec::new();
    for nodes in [11, 21, 41, 81, 161, 321] {
        let grid = build_grid(1.0, nodes).unwrap();
        let values: Vec<f64> = grid.nodes().iter().map(|t| -2.0 * t * t).collect();
        let err = (integrate(&grid, &values).unwrap() - exact).abs();
        scaled.push(err * ((nodes - 1) as f64).powi(2));
    }
    // -h²/12 · (b - a) · f'' = h²/3 for f = -2t².
    for s in &scaled {
        assert!((s - 1.0 / 3.0).abs() < 1e-9, "{scaled:?}");
    }
}

// The generator builds raw trees such as `-(-0.5)`; the parser folds
// literals, so file contents are compared in parsed form.
fn canonical(e: Expr, n: usize) -> Expr {
    parse_expr(&e.to_string(), n).unwrap()
}

fn state_free_expr(rng: &mut ChaCha8Rng) -> Expr {
    loop {
        let depth = rng.random_range(0..=3);
        let e = random_expr(rng, 1, depth);
        if !e.depends_on_state() {
            return canonical(e, 1);
        }
    }
}

fn random_file(rng: &mut ChaCha8Rng) -> ProblemFile {
    let n = rng.random_range(1..=4);
    let p = rng.random_range(0..=n);
    let m = rng.random_range(0..=3);
    let mut depth = || rng.random_range(0..=4);
    let (d0, deq, dineq): (u32, Vec<u32>, Vec<u32>) =
        (depth(), (0..p).map(|_| depth()).collect(), (0..m).map(|_| depth()).collect());
    let objective = canonical(random_expr(rng, n, d0), n);
    let equalities = deq.into_iter().map(|d| canonical(random_expr(rng, n, d), n)).collect();
    let inequalities = dineq.into_iter().map(|d| canonical(random_expr(rng, n, d), n)).collect();
    let names = ["plain", "with \"quotes\"", "ünïcode name", "tab\there"];
    let name = names[rng.random_range(0..names.len())];
    let horizon = rng.random_range(0.1..10.0);
    let problem = Problem::new(name, n, horizon, objective, equalities, inequalities).unwrap();
    let candidate = rng
        .random_bool(0.5)
        .then(|| (0..n).map(|_| state_free_expr(rng)).collect());
    ProblemFile { problem, candidate }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn save_then_load_is_identity(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let file = random_file(&mut rng);
        let text = save_problem(&file);
        let back = load_problem(&text).unwrap();
        prop_assert_eq!(back, file, "{}", text);
    }

    #[test]
    fn active_set_grows_with_the_band(seed in any::<u64>(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let n = rng.random_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let slack: Vec<f64> = (0..4).map(|_| rng.random_range(-0.2..1.2)).collect();
        let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = vec![0.0; n];
        let problem = common::linear_problem(&z0, &c, &[], &rows, &slack);
        let z: Vec<f64> = z0.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect();
        let small = evaluate_point(&problem, &z, 0.0, lo).unwrap();
        let large = evaluate_point(&problem, &z, 0.0, hi).unwrap();
        for j in &small.active {
            prop_assert!(large.active.contains(j));
        }
        for j in 0..4 {
            prop_assert_eq!(small.active.contains(&j), small.g[j] <= lo);
        }
    }
}
