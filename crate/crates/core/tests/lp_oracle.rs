mod support;

use occlp::lp::{
    solve_simplex, solve_simplex_with, LpStandardForm, LpStatus, Sense, SimplexOptions,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use support::{simplex_vs_vertex_enumeration, Small};

#[test]
fn simplex_matches_vertex_enumeration_on_500_random_lps() {
    println!("{}", simplex_vs_vertex_enumeration(500).unwrap());
}

#[test]
fn optimal_solutions_satisfy_duality_and_complementarity() {
    let mut rng = StdRng::seed_from_u64(99);
    for case in 0..300 {
        let p = Small::random(&mut rng, case % 3 == 0);
        let lp = p.to_lp();
        let sol = solve_simplex(&lp).unwrap();
        if sol.status != LpStatus::Optimal {
            continue;
        }
        let gap = sol.objective - sol.dual_objective(&lp);
        assert!(gap.abs() <= 1e-8, "case {case}: gap {gap}");
        let ax = lp.activities(&sol.x);
        for (i, row) in lp.rows.iter().enumerate() {
            let y = sol.duals[i];
            match row.sense {
                Sense::Le => assert!(y <= 1e-9),
                Sense::Ge => assert!(y >= -1e-9),
                Sense::Eq => {}
            }
            assert!((y * (ax[i] - row.rhs)).abs() <= 1e-8, "case {case} row {i}");
        }
        for (j, &d) in sol.reduced_costs.iter().enumerate() {
            assert!(d >= -1e-9, "case {case}: reduced cost {d}");
            assert!((d * sol.x[j]).abs() <= 1e-8);
        }
    }
}

fn strategy() -> impl Strategy<Value = (u64, bool)> {
    (any::<u64>(), any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn weak_duality_holds((seed, integral) in strategy()) {
        let p = Small::random(&mut StdRng::seed_from_u64(seed), integral);
        let lp = p.to_lp();
        let sol = solve_simplex(&lp).unwrap();
        if sol.status == LpStatus::Optimal {
            prop_assert!(sol.dual_objective(&lp) <= sol.objective + 1e-8);
        }
    }

    #[test]
    fn resolving_from_the_optimal_basis_takes_no_pivots((seed, integral) in strategy()) {
        let lp = Small::random(&mut StdRng::seed_from_u64(seed), integral).to_lp();
        let sol = solve_simplex(&lp).unwrap();
        if let Some(basis) = sol.basis.as_ref() {
            let again = solve_simplex_with(&lp, &SimplexOptions::default(), Some(basis)).unwrap();
            prop_assert_eq!(again.iterations, 0);
            prop_assert_eq!(again.basis.as_ref(), Some(basis));
        }
    }

    #[test]
    fn scaling_the_objective_keeps_the_basis(
        (seed, integral) in strategy(),
        power in -3i32..=3,
    ) {
        // powers of two scale every reduced cost exactly
        let alpha = 2f64.powi(power);
        let mut lp = Small::random(&mut StdRng::seed_from_u64(seed), integral).to_lp();
        let sol = solve_simplex(&lp).unwrap();
        lp.cost.iter_mut().for_each(|c| *c *= alpha);
        let scaled = solve_simplex(&lp).unwrap();
        prop_assert_eq!(sol.status, scaled.status);
        prop_assert_eq!(sol.basis, scaled.basis);
        if sol.status == LpStatus::Optimal {
            prop_assert!((scaled.objective - alpha * sol.objective).abs() <= 1e-9 * (1.0 + scaled.objective.abs()));
        }
    }
}

#[test]
fn degenerate_cycling_example_terminates() {
    // Beale's classic instance cycles under pure Dantzig pricing with
    // lowest-index tie breaking.
    let mut lp = LpStandardForm::new();
    let r1 = lp.add_row(Sense::Le, 0.0);
    let r2 = lp.add_row(Sense::Le, 0.0);
    let r3 = lp.add_row(Sense::Le, 1.0);
    lp.add_column(-0.75, &[(r1, 0.25), (r2, 0.5)]);
    lp.add_column(150.0, &[(r1, -60.0), (r2, -90.0)]);
    lp.add_column(-0.02, &[(r1, -0.04), (r2, -0.02), (r3, 1.0)]);
    lp.add_column(6.0, &[(r1, 9.0), (r2, 3.0)]);
    let sol = solve_simplex(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective + 0.05).abs() < 1e-12, "{}", sol.objective);
}
