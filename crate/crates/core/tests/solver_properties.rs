mod common;

use ctkkt::model::{build_grid, check_feasibility};
use ctkkt::solver::{solve_pointwise, solve_trajectory, SolveOptions};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_gives_bit_identical_trajectories(seed in any::<u64>()) {
        let problem = common::example2();
        let grid = build_grid(1.0, 5).unwrap();
        let opts = SolveOptions { seed, starts: 4, ..SolveOptions::default() };
        let a = solve_trajectory(&problem, &grid, &opts).unwrap();
        let b = solve_trajectory(&problem, &grid, &opts).unwrap();
        for (ra, rb) in a.trajectory.values().iter().zip(b.trajectory.values()) {
            let bits = |r: &[f64]| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(ra), bits(rb));
        }
    }

    #[test]
    fn more_starts_never_lose_objective(seed in any::<u64>(), t in 0.0f64..1.0) {
        for problem in [common::example1(), common::example2()] {
            let mut previous = f64::NEG_INFINITY;
            for starts in [1, 2, 4, 8] {
                let opts = SolveOptions { seed, starts, ..SolveOptions::default() };
                let sol = solve_pointwise(&problem, t, &opts).unwrap();
                let slack = 1e-12 * (1.0 + sol.objective.abs());
                prop_assert!(sol.objective >= previous - slack, "{starts} starts: {} < {previous}", sol.objective);
                previous = sol.objective;
            }
        }
    }
}

#[test]
fn solutions_of_both_examples_are_feasible() {
    for problem in [common::example1(), common::example2()] {
        let grid = build_grid(1.0, 21).unwrap();
        let sol = solve_trajectory(&problem, &grid, &SolveOptions::default()).unwrap();
        assert!(sol.is_complete());
        let report = check_feasibility(&problem, &sol.trajectory, 1e-6, 1e-6).unwrap();
        assert!(report.pass, "{report:?}");
    }
}
