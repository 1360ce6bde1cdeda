mod common;

use cisynth::boxes::GridBox;
use cisynth::reach::{reach_boxes, RealBox};
use cisynth::synth::{
    certify, one_step_returnable_q, returnable_verification, rollout_check, synthesize_cis, termination_bound,
    SynthOptions, SynthStatus,
};
use common::*;

fn with_history() -> SynthOptions {
    SynthOptions { keep_history: true, ..SynthOptions::default() }
}

/// Largest distance, in cells, between boundary runs of two 1-D masks.
fn boundary_gap(a: &[bool], b: &[bool]) -> usize {
    let first = |m: &[bool]| m.iter().position(|&v| v);
    let last = |m: &[bool]| m.iter().rposition(|&v| v);
    match (first(a), first(b)) {
        (Some(fa), Some(fb)) => fa.abs_diff(fb).max(last(a).unwrap().abs_diff(last(b).unwrap())),
        (None, None) => 0,
        _ => usize::MAX,
    }
}

#[test]
fn doubling_net_matches_grid_dp() {
    let (m, safe, u) = scalar_problem(2.0, 0.5, (-1.0, 1.0), (-1.0, 1.0), 1.0 / 16.0);
    let atlas = synthesize_cis(&m, &safe, &u, &with_history(), |_| {}).unwrap();
    let oracle = scalar_dp_oracle(safe.grid(), &safe.mask(), 2.0, 0.5);
    let got = atlas.cis().mask();
    assert!(boundary_gap(&got, &oracle) <= 1, "got {got:?}\noracle {oracle:?}");
    // The set is an interval, so the masks should in fact agree.
    assert_eq!(got, oracle);
    let cells = atlas.cis().cardinality();
    assert_eq!(cells, 16, "expected [-0.5, 0.5]");
    assert!(history_nested(&atlas));
    assert!(certify(&m, &atlas).unwrap().passed());
}

#[test]
fn dp_oracle_agrees_on_random_scalar_systems() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for i in 0..12 {
        let a = rng.gen_range(0.5..2.5);
        let umax = rng.gen_range(0.05..0.6);
        let lo = -(rng.gen_range(2..=8) as f64) / 8.0;
        let hi = rng.gen_range(2..=8) as f64 / 8.0;
        let (m, safe, u) = scalar_problem(a, umax, (-1.0, 1.0), (lo, hi), 1.0 / 8.0);
        let atlas = synthesize_cis(&m, &safe, &u, &with_history(), |_| {}).unwrap();
        let oracle = scalar_dp_oracle(safe.grid(), &safe.mask(), a, umax);
        assert!(boundary_gap(&atlas.cis().mask(), &oracle) <= 1, "case {i}: a={a} umax={umax} safe=[{lo},{hi}]");
        assert!(history_nested(&atlas));
        assert!(atlas.iterations() as u64 <= termination_bound(&safe));
    }
}

#[test]
fn integrator_terminates_at_first_iteration() {
    let (m, safe, u) = scalar_problem(1.0, 0.1, (-1.0, 1.0), (-0.5, 0.5), 0.125);
    let atlas = synthesize_cis(&m, &safe, &u, &with_history(), |_| {}).unwrap();
    assert_eq!(atlas.iterations(), 1);
    assert!(atlas.cis().equals(&safe).unwrap());
    assert_eq!(termination_bound(&safe), 9);
}

#[test]
fn tripling_net_has_no_invariant_set() {
    let (m, safe, u) = scalar_problem(3.0, 0.1, (-1.0, 1.0), (-1.0, 1.0), 0.25);
    let atlas = synthesize_cis(&m, &safe, &u, &with_history(), |_| {}).unwrap();
    assert_eq!(atlas.status(), SynthStatus::Empty);
    assert!(atlas.iterations() as u64 <= termination_bound(&safe));
    assert!(history_nested(&atlas));
}

#[test]
fn contractive_net_keeps_the_whole_box() {
    let (m, safe, u) = scalar_problem(0.5, 0.5, (-1.0, 1.0), (-1.0, 1.0), 0.125);
    let (sub, entries, stats) = one_step_returnable_q(&m, &safe, &safe, &u, &SynthOptions::default()).unwrap();
    assert!(sub.equals(&safe).unwrap());
    assert_eq!(stats.partitioned, 0);
    assert_eq!(entries.len(), safe.boxes().len());
    let empty = cisynth::boxes::BoxSet::empty(safe.grid().clone());
    let (sub, entries, _) = one_step_returnable_q(&m, &empty, &safe, &u, &SynthOptions::default()).unwrap();
    assert!(sub.is_empty() && entries.is_empty());
}

#[test]
fn verification_preserves_order_and_checks_controls() {
    let (m, safe, u) = scalar_problem(2.0, 0.5, (-1.0, 1.0), (-1.0, 1.0), 1.0 / 16.0);
    let boxes: Vec<GridBox> = safe.boxes()[0].cells().into_iter().rev().map(|c| GridBox::cell(&c)).collect();
    let v = returnable_verification(&m, &boxes, &safe, &u, &SynthOptions::default()).unwrap();
    assert_eq!(v.verified.len() + v.undetermined.len(), boxes.len());
    let order: Vec<&GridBox> = boxes.iter().filter(|b| v.verified.iter().any(|e| &e.0 == *b)).collect();
    assert_eq!(order, v.verified.iter().map(|e| &e.0).collect::<Vec<_>>());
    for (b, uk) in &v.verified {
        assert!(u.contains(uk));
        let (_, out) = reach_boxes(&m, &safe.grid().real_box(b), &RealBox::point(uk)).unwrap();
        assert!(out.lo[0] >= -1.0 && out.hi[0] <= 1.0);
    }
    let none = returnable_verification(&m, &[], &safe, &u, &SynthOptions::default()).unwrap();
    assert!(none.verified.is_empty() && none.undetermined.is_empty());
}

#[test]
fn lane_keeping_coarse_is_deterministic_across_jobs() {
    let (m, safe, u) = lane_problem(16);
    let a = synthesize_cis(&m, &safe, &u, &with_history(), |_| {}).unwrap();
    let b = synthesize_cis(&m, &safe, &u, &SynthOptions { jobs: 3, ..with_history() }, |_| {}).unwrap();
    assert_eq!(a.cis().basis_indices(), b.cis().basis_indices());
    assert_eq!(a.entries(), b.entries());
    assert!(history_nested(&a));
    assert!(a.status() == SynthStatus::Invariant);
    assert!(a.cis().is_subset_of(&safe).unwrap());
    let cert = certify(&m, &a).unwrap();
    assert!(cert.passed(), "{cert:?}");
    let roll = rollout_check(&m, &a, 500).unwrap();
    assert!(roll.exits.is_empty());
}

#[test]
fn shared_faces_resolve_to_admissible_controls() {
    let (m, safe, u) = lane_problem(16);
    let atlas = synthesize_cis(&m, &safe, &u, &SynthOptions::default(), |_| {}).unwrap();
    let grid = atlas.grid().clone();
    let mut checked = 0;
    for (i, (b, _)) in atlas.entries().iter().enumerate() {
        let rb = grid.real_box(b);
        // Corner and face midpoints of every entry box.
        for x in [rb.lo.clone(), rb.hi.clone(), vec![rb.lo[0], 0.5 * (rb.lo[1] + rb.hi[1])]] {
            let k = atlas.locate(&x).unwrap();
            assert!(k <= i);
            assert!(atlas.real_box(k).contains_point(&x, 1e-9));
            let y = m.forward(&x, &atlas.control(&x).unwrap()).unwrap();
            assert!(atlas.contains(&y), "x {x:?} -> {y:?}");
            checked += 1;
        }
    }
    assert!(checked > 0);
    assert!(atlas.control(&[1.45, -1.45]).is_err());
}
