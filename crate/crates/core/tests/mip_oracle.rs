mod common;

use cisynth::mip::{lp_solve, mip_solve, presolve_propagate, LpStatus, MipModel, MipStatus, Sense, SolverConfig};
use common::{enumerate_milp, random_lp, random_milp};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut solved = 0;
    for case in 0..60 {
        let n = 2 + case % 4;
        let lp = random_lp(&mut rng, n, 2 + case % 6);
        let model = lp.to_model();
        let (status, x, obj) = lp_solve(&model, 1e-9);
        match lp.vertex_oracle() {
            Some(best) => {
                assert_eq!(status, LpStatus::Optimal, "case {case}: oracle optimum {best}");
                assert!((obj - best).abs() <= 1e-7, "case {case}: {obj} vs {best}");
                assert!(model.residuals(&x).rows <= 1e-9);
                solved += 1;
            }
            None => assert_eq!(status, LpStatus::Infeasible, "case {case}"),
        }
    }
    assert!(solved >= 20, "too few feasible cases ({solved})");
}

#[test]
fn milp_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..80 {
        let plant = case % 4 != 0;
        let m = random_milp(&mut rng, 1 + case % 8, 1 + case % 6, 2 + case % 9, plant);
        let r = mip_solve(&m, &SolverConfig::default());
        match enumerate_milp(&m) {
            Some(best) => {
                assert_eq!(r.status, MipStatus::Optimal, "case {case}");
                assert!((r.objective - best).abs() <= 1e-6, "case {case}: {} vs {best}", r.objective);
                assert!(m.residuals(&r.assignment).within(1e-9, 1e-7));
            }
            None => assert_eq!(r.status, MipStatus::Infeasible, "case {case}"),
        }
    }
}

#[test]
fn presolve_keeps_every_integer_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..60 {
        let m = random_milp(&mut rng, 2 + case % 8, 1 + case % 4, 3 + case % 6, true);
        let pre = presolve_propagate(&m);
        let full = enumerate_milp(&m);
        if pre.infeasible {
            assert!(full.is_none(), "case {case}: presolve declared a feasible model infeasible");
        } else {
            assert_eq!(
                enumerate_milp(&pre.model).map(|v| (v * 1e6).round()),
                full.map(|v| (v * 1e6).round()),
                "case {case}"
            );
        }
    }
}

#[test]
fn relu_block_with_fixed_inputs() {
    // a ∈ max(0, â) when â = −2, b̂ = −1 and bounds ±3
    let mut m = MipModel::new();
    let ah = m.add_continuous(-2.0, -2.0).unwrap();
    let bh = m.add_continuous(-1.0, -1.0).unwrap();
    let block = cisynth::encode::encode_milc_relu(&mut m, &[ah], &[bh], &[-3.0], &[3.0]).unwrap();
    let r = mip_solve(&m, &SolverConfig::default());
    assert_eq!(r.status, MipStatus::Optimal);
    assert_eq!((r.value(block.alpha[0]), r.value(block.beta[0]), r.value(block.gamma[0])), (1.0, 0.0, 0.0));
    assert_eq!((r.value(block.a[0]), r.value(block.b[0])), (0.0, 0.0));
}

#[test]
fn warm_start_seeds_incumbent() {
    let mut m = MipModel::new();
    let a = m.add_binary();
    let b = m.add_binary();
    m.add_row(&[(a, 1.0), (b, 1.0)], Sense::Le, 1.0).unwrap();
    m.set_objective(&[(a, -1.0), (b, -2.0)], 0.0).unwrap();
    m.set_initial(vec![1.0, 0.0]).unwrap();
    let r = mip_solve(&m, &SolverConfig::default());
    assert_eq!(r.status, MipStatus::Optimal);
    assert!((r.objective + 2.0).abs() < 1e-12);
    let first = mip_solve(&m, &SolverConfig { feasibility_only: true, ..SolverConfig::default() });
    assert_eq!(first.status, MipStatus::Feasible);
    assert_eq!(first.assignment, vec![1.0, 0.0]);
}

#[test]
fn node_limit_reports_iteration_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_milp(&mut rng, 10, 4, 8, true);
    let r = mip_solve(&m, &SolverConfig { node_limit: 1, ..SolverConfig::default() });
    assert!(matches!(r.status, MipStatus::IterationLimit | MipStatus::Feasible | MipStatus::Optimal));
    let lp = m.to_lp_string();
    assert!(lp.starts_with("\\ cisynth model\nMinimize") && lp.ends_with("End\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solutions_are_feasible_and_deterministic(seed in 0u64..10_000, nb in 1usize..7, nc in 1usize..5, nr in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_milp(&mut rng, nb, nc, nr, true);
        let r1 = mip_solve(&m, &SolverConfig::default());
        let r2 = mip_solve(&m, &SolverConfig::default());
        prop_assert_eq!(r1.status, r2.status);
        prop_assert_eq!(r1.nodes, r2.nodes);
        prop_assert_eq!(&r1.assignment, &r2.assignment);
        if r1.status.has_solution() {
            prop_assert!(m.residuals(&r1.assignment).within(1e-9, 1e-7));
        }
    }

    #[test]
    fn warm_start_dominance(seed in 0u64..10_000, nb in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_milp(&mut rng, nb, 3, 5, true);
        let plain = mip_solve(&m, &SolverConfig::default());
        if plain.status == MipStatus::Optimal {
            let start = plain.assignment.clone();
            let start_obj = m.objective_value(&start);
            m.set_initial(start).unwrap();
            let warm = mip_solve(&m, &SolverConfig::default());
            prop_assert!(warm.status.has_solution());
            prop_assert!(warm.objective <= start_obj + 1e-12);
        }
    }

    #[test]
    fn infeasible_reports_are_sound(seed in 0u64..10_000, nb in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_milp(&mut rng, nb, 2, 6, false);
        let r = mip_solve(&m, &SolverConfig::default());
        if r.status == MipStatus::Infeasible {
            prop_assert!(enumerate_milp(&m).is_none());
        }
    }
}
