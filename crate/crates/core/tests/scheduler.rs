mod common;

use common::{random_sequences, lively_model, tiny_config};
use elbert::exit_policy::{ExitPolicy, Window};
use elbert::scheduler::{
    compare_strategies, compute_ratio, run_algorithm1, run_case1, run_case2, run_case3, run_case4, run_strategy,
    simulate_latency, CostModel, ModelEngine, RunOutput, ScriptedEngine, SpeedupBreakdown, Strategy as Exec,
};
use proptest::prelude::*;

fn same_results(a: &RunOutput, b: &RunOutput) -> bool {
    a.results.len() == b.results.len()
        && a.results.iter().zip(&b.results).all(|(x, y)| {
            x.sample_id == y.sample_id && x.prediction == y.prediction && x.exit_layer == y.exit_layer && x.stage == y.stage
        })
}

fn plan_strategy() -> impl Strategy<Value = (usize, Vec<usize>, usize)> {
    (1usize..14).prop_flat_map(|d| (Just(d), prop::collection::vec(1..=d, 0..60), 1usize..12))
}

proptest! {
    #[test]
    fn refill_matches_sequential((d, plan, n) in plan_strategy()) {
        let e = ScriptedEngine::new(d, plan.clone()).unwrap();
        let p = ExitPolicy::new(0.5).unwrap();
        let seq = run_case2(&e, Some(&p)).unwrap();
        let alg = run_algorithm1(&e, Some(&p), n).unwrap();
        prop_assert!(same_results(&seq, &alg));
        prop_assert_eq!(alg.exit_layers(), plan.clone());
        let ids: Vec<usize> = alg.results.iter().map(|r| r.sample_id).collect();
        prop_assert_eq!(ids, (0..plan.len()).collect::<Vec<_>>());
        prop_assert!(alg.results.iter().all(|r| r.exit_layer <= d));
    }

    #[test]
    fn every_strategy_conserves_work((d, plan, n) in plan_strategy()) {
        let e = ScriptedEngine::new(d, plan).unwrap();
        let p = ExitPolicy::new(0.5).unwrap();
        for s in Exec::ALL {
            let out = run_strategy(&e, s, Some(&p), n).unwrap();
            prop_assert!(out.log.is_conserved(), "{}", s);
            prop_assert!(out.log.steps.iter().all(|st| st.occupancy <= st.width));
        }
    }

    #[test]
    fn step_counts_are_ordered((d, plan, n) in plan_strategy()) {
        let e = ScriptedEngine::new(d, plan).unwrap();
        let p = ExitPolicy::new(0.5).unwrap();
        let a = run_algorithm1(&e, Some(&p), n).unwrap().log.steps.len();
        let c4 = run_case4(&e, Some(&p), n).unwrap().log.steps.len();
        let c3 = run_case3(&e, n).unwrap().log.steps.len();
        prop_assert!(a <= c4 && c4 <= c3, "alg1 {} case4 {} case3 {}", a, c4, c3);
    }

    #[test]
    fn simulated_time_is_ordered((d, plan, n) in plan_strategy()) {
        prop_assume!(!plan.is_empty());
        let e = ScriptedEngine::new(d, plan).unwrap();
        let p = ExitPolicy::new(0.5).unwrap();
        let (rows, _) = compare_strategies(&e, Some(&p), n, &CostModel::default(), None).unwrap();
        let t = |s: Exec| rows.iter().find(|r| r.strategy == s).unwrap().sim_time;
        prop_assert!(t(Exec::Algorithm1) <= t(Exec::Case4));
        prop_assert!(t(Exec::Case4) <= t(Exec::Case3));
        let b = SpeedupBreakdown::from_rows(&rows).unwrap();
        prop_assert!(b.factorization_error() < 1e-12);
    }

    #[test]
    fn drain_does_not_depend_on_stream_length(d in 2usize..8, n in 2usize..6, extra in 0usize..6) {
        let plan: Vec<usize> = (0..(3 * n + extra)).map(|i| 1 + (i * 7) % d).collect();
        let e = ScriptedEngine::new(d, plan.clone()).unwrap();
        let p = ExitPolicy::new(0.5).unwrap();
        prop_assert_eq!(run_algorithm1(&e, Some(&p), n).unwrap().exit_layers(), plan);
    }
}

#[test]
fn zero_slots_are_rejected() {
    let e = ScriptedEngine::new(3, vec![1, 2]).unwrap();
    assert!(run_algorithm1(&e, None, 0).is_err());
    assert!(run_case3(&e, 0).is_err());
    assert!(run_case4(&e, None, 0).is_err());
}

#[test]
fn compute_ratio_examples() {
    let p = ExitPolicy::new(0.5).unwrap();
    let e = ScriptedEngine::new(24, vec![4, 8, 24]).unwrap();
    assert_eq!(compute_ratio(&run_case2(&e, Some(&p)).unwrap().log, 24).unwrap(), 0.5);
    let e = ScriptedEngine::new(12, vec![1; 5]).unwrap();
    assert_eq!(compute_ratio(&run_case2(&e, Some(&p)).unwrap().log, 12).unwrap(), 1.0 / 12.0);
    assert_eq!(compute_ratio(&run_case1(&e).unwrap().log, 12).unwrap(), 1.0);
    let empty = ScriptedEngine::new(12, vec![]).unwrap();
    assert!(compute_ratio(&run_case1(&empty).unwrap().log, 12).is_err());
}

#[test]
fn real_model_refill_matches_sequential() {
    let cfg = tiny_config(6);
    let model = lively_model(cfg, 4, 25.0);
    let xs = random_sequences(3, 60, &cfg);
    let engine = ModelEngine::new(&model, &xs).unwrap();
    let policies = [
        ExitPolicy::threshold_only(0.3).unwrap(),
        ExitPolicy {
            window: Window::Size(2),
            ..ExitPolicy::new(0.1).unwrap()
        },
    ];
    for p in &policies {
        let seq = run_case2(&engine, Some(p)).unwrap();
        assert!(common::distinct(&seq.exit_layers()) >= 3, "{:?}", seq.exit_layers());
        for (r, x) in seq.results.iter().zip(&xs) {
            let direct = model.forward_with_trace(x, Some(p)).unwrap();
            assert_eq!((r.prediction, r.exit_layer), (direct.label, direct.exit_layer));
        }
        for n in [1, 3, 8, 64] {
            let alg = run_algorithm1(&engine, Some(p), n).unwrap();
            assert!(same_results(&seq, &alg), "n = {n}");
            for (a, b) in seq.results.iter().zip(&alg.results) {
                for (pa, pb) in a.trace.probs().iter().zip(b.trace.probs()) {
                    assert!(pa.iter().zip(pb).all(|(x, y)| (x - y).abs() < 1e-9));
                }
            }
            let c4 = run_case4(&engine, Some(p), n).unwrap();
            assert!(same_results(&seq, &c4));
            assert!(alg.log.is_conserved() && c4.log.is_conserved());
        }
    }
    let c1 = run_case1(&engine).unwrap();
    for n in [2, 5] {
        assert_eq!(run_case3(&engine, n).unwrap().predictions(), c1.predictions());
    }
}

#[test]
fn no_policy_collapses_strategies() {
    let cfg = tiny_config(3);
    let model = lively_model(cfg, 1, 25.0);
    let xs = random_sequences(4, 11, &cfg);
    let engine = ModelEngine::new(&model, &xs).unwrap();
    let (rows, _) = compare_strategies(&engine, None, 4, &CostModel::default(), None).unwrap();
    assert!(rows.iter().all(|r| r.compute_ratio == 1.0));
    let steps = |s: Exec| rows.iter().find(|r| r.strategy == s).unwrap().steps;
    assert_eq!(steps(Exec::Case1), steps(Exec::Case2));
    assert_eq!(steps(Exec::Case3), steps(Exec::Case4));
    assert_eq!(steps(Exec::Case3), steps(Exec::Algorithm1));
    let c1 = run_case1(&engine).unwrap();
    let lat = simulate_latency(&c1.log, &CostModel::default());
    assert!(lat.total_time > 0.0 && lat.throughput > 0.0);
}
