//! Routing against a hand-written walker, plus the threshold laws.

mod common;

use common::{bundle, fixture, reference_walk, Fixture};
use ea_core::backends::CostProfile;
use ea_core::dataset::Split;
use ea_core::metrics::compute_report;
use ea_core::router::{
    build_plan, calibrate_thresholds, route_examples, sweep_thresholds, CascadePlan, RouteOptions,
    Stage, Terminal,
};
use ea_core::simulator::{generate_world, WorldConfig};
use proptest::prelude::*;

fn plan_for(f: &Fixture, taus: &[f64], tau2: f64) -> CascadePlan {
    let mut t = taus.iter().cycle();
    CascadePlan {
        stages: f
            .ssms
            .iter()
            .map(|b| Stage {
                backend: b.clone(),
                tau: *t.next().unwrap(),
            })
            .collect(),
        terminal: Terminal {
            backend: f.lm.clone(),
            tau2: Some(tau2),
        },
        augmented: f
            .assms
            .iter()
            .map(|b| Stage {
                backend: b.clone(),
                tau: *t.next().unwrap(),
            })
            .collect(),
    }
}

fn lm_reach(plan: &CascadePlan, f: &Fixture) -> usize {
    route_examples(plan, &f.table, &f.examples, RouteOptions::default())
        .unwrap()
        .traces
        .iter()
        .filter(|t| t.steps.iter().any(|s| s.backend == f.lm))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn traces_match_reference_walk(
        f in fixture(40, 4, 2),
        taus in prop::collection::vec(0.0f64..=1.0, 6),
        tau2 in 0.0f64..=1.0,
    ) {
        let plan = plan_for(&f, &taus, tau2);
        let out = route_examples(&plan, &f.table, &f.examples, RouteOptions { jobs: Some(3), skip_errors: false }).unwrap();
        prop_assert_eq!(out.traces.len(), f.examples.len());
        let order = plan.backend_ids();
        for (trace, ex) in out.traces.iter().zip(&f.examples) {
            let want = reference_walk(&plan, &f.table, ex);
            let visited: Vec<String> = trace.steps.iter().map(|s| s.backend.clone()).collect();
            prop_assert_eq!(&trace.example_id, &ex.id);
            prop_assert_eq!(&visited, &want.visited);
            prop_assert_eq!(trace.steps.iter().map(|s| s.accepted).collect::<Vec<_>>(), want.accepted);
            prop_assert_eq!(&trace.final_backend, &want.final_backend);
            prop_assert_eq!(trace.final_label, want.final_label);
            // Bounded length, plan-order prefix, only the last step accepts.
            prop_assert!(trace.steps.len() <= plan.max_len());
            prop_assert_eq!(&order[..visited.len()], &visited.iter().map(String::as_str).collect::<Vec<_>>()[..]);
            let (last, rest) = trace.steps.split_last().unwrap();
            prop_assert!(last.accepted && rest.iter().all(|s| !s.accepted));
            for s in &trace.steps {
                let r = f.table.get(&s.backend, &ex.id);
                prop_assert_eq!(s.confidence, r.confidence);
                prop_assert_eq!(s.label, r.predicted);
            }
        }
    }

    #[test]
    fn threshold_boundaries_and_monotonicity(f in fixture(40, 4, 0)) {
        let base = plan_for(&f, &[0.5], 0.5);
        let n = f.examples.len();
        prop_assert_eq!(lm_reach(&base.with_global_tau(0.0), &f), 0);
        // No fixture confidence reaches 1.0.
        prop_assert_eq!(lm_reach(&base.with_global_tau(1.0), &f), n);

        let b = bundle(f.k, Split::Val, f.examples.clone());
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let sweep = sweep_thresholds(&base, &f.table, &b, Split::Val, &grid, None).unwrap();
        prop_assert_eq!(sweep[0].lm_proportion, 0.0);
        prop_assert_eq!(sweep[10].lm_proportion, 1.0);
        for w in sweep.windows(2) {
            prop_assert!(w[0].lm_invocations <= w[1].lm_invocations, "{:?}", sweep);
        }
        for p in &sweep {
            prop_assert_eq!(p.lm_invocations, lm_reach(&base.with_global_tau(p.tau), &f));
        }
    }

    #[test]
    fn opaque_lm_ends_the_cascade(f in fixture(30, 3, 2), tau in 0.0f64..=1.0) {
        let mut f = f;
        f.table.opaque.insert(f.lm.clone());
        let plan = plan_for(&f, &[tau], 1.0);
        let out = route_examples(&plan, &f.table, &f.examples, RouteOptions::default()).unwrap();
        for t in &out.traces {
            prop_assert!(t.steps.iter().all(|s| !s.backend.starts_with("assm")));
        }
    }

    #[test]
    fn report_matches_brute_force(
        f in fixture(40, 3, 2),
        taus in prop::collection::vec(0.0f64..=1.0, 5),
        tau2 in 0.0f64..=1.0,
        latency in prop::collection::vec(0.0f64..500.0, 6),
        memory in prop::collection::vec(0.0f64..4000.0, 6),
    ) {
        let plan = plan_for(&f, &taus, tau2);
        let out = route_examples(&plan, &f.table, &f.examples, RouteOptions::default()).unwrap();
        let costs: Vec<(String, CostProfile)> = plan
            .backend_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), CostProfile { latency_ms_per_call: latency[i], memory_mb: memory[i], dollars_per_1k_calls: 1.0 }))
            .collect();
        let report = compute_report(&out.traces, &f.examples, None, &costs, Some(&f.lm)).unwrap();

        let n = f.examples.len();
        let mut latency_sum = 0.0;
        let mut calls = 0usize;
        let mut peak: f64 = 0.0;
        let mut correct = 0;
        for (ex, t) in f.examples.iter().zip(&out.traces) {
            let w = reference_walk(&plan, &f.table, ex);
            correct += (w.final_label == ex.gold) as usize;
            for b in &w.visited {
                let (_, c) = costs.iter().find(|(id, _)| id == b).unwrap();
                latency_sum += c.latency_ms_per_call;
                peak = peak.max(c.memory_mb);
                calls += 1;
            }
            prop_assert_eq!(t.steps.len(), w.visited.len());
        }
        prop_assert_eq!(report.correct, correct);
        prop_assert!((report.cost.total_latency_ms - latency_sum).abs() < 1e-6 * latency_sum.max(1.0));
        prop_assert_eq!(report.cost.peak_memory_mb, peak);
        prop_assert!((report.cost.total_dollars - calls as f64 / 1000.0).abs() < 1e-9);
        let total: usize = report.per_backend.values().map(|u| u.invocations).sum();
        prop_assert_eq!(total, n);
        let pct: f64 = report.per_backend.values().map(|u| u.proportion).sum();
        prop_assert!((pct - 100.0).abs() < 1e-9);

        // Stopping at the large model equals routing without the augmented layer.
        let short = route_examples(&plan.without_augmented(), &f.table, &f.examples, RouteOptions::default()).unwrap();
        let direct = short.traces.iter().zip(&f.examples).filter(|(t, ex)| t.final_label == ex.gold).count();
        prop_assert_eq!(report.specific_layer_accuracy, Some(direct as f64 / n as f64));
    }
}

#[test]
fn seed7_world_matches_reference_walk() {
    let mut config = WorldConfig::preset("table3like").unwrap();
    config.splits.train = 0;
    config.splits.val = 500;
    config.splits.test = 200;
    let world = generate_world(&config).unwrap();
    let registry = world.registry().unwrap();
    let d = config.cascade;
    let (plan, _) = build_plan(&registry, &world.bundle, Split::Val, d.tau, d.tau2, d.augmented_tau).unwrap();
    assert_eq!((plan.stages.len(), plan.augmented.len()), (3, 1));
    let test = world.bundle.split(Split::Test);
    assert_eq!(test.len(), 200);
    let out = route_examples(&plan, &registry, test, RouteOptions::default()).unwrap();
    let mut reached_assm = 0;
    for (t, ex) in out.traces.iter().zip(test) {
        let w = reference_walk(&plan, &registry, ex);
        let visited: Vec<&str> = t.steps.iter().map(|s| s.backend.as_str()).collect();
        assert_eq!(visited, w.visited.iter().map(String::as_str).collect::<Vec<_>>(), "{}", ex.id);
        assert_eq!((t.final_backend.as_str(), t.final_label), (w.final_backend.as_str(), w.final_label));
        reached_assm += (visited.len() == plan.max_len()) as usize;
    }
    // The fixture exercises every layer.
    assert!(reached_assm > 0);
}

#[test]
fn calibration_matches_exhaustive_search() {
    let mut config = WorldConfig::preset("table3like").unwrap();
    config.splits.train = 0;
    config.splits.test = 0;
    let world = generate_world(&config).unwrap();
    let registry = world.registry().unwrap();
    let (skeleton, _) = build_plan(&registry, &world.bundle, Split::Val, 0.5, Some(0.75), 0.5).unwrap();
    let skeleton = skeleton.without_augmented();
    let val = world.bundle.split(Split::Val);
    let grid = [0.5, 0.7, 0.9];
    let cal = calibrate_thresholds(&skeleton, &registry, &world.bundle, Split::Val, &grid, None, None).unwrap();

    let scored: Vec<(usize, usize, f64)> = grid
        .iter()
        .map(|&tau| {
            let plan = skeleton.with_global_tau(tau);
            let (mut correct, mut lm) = (0, 0);
            for ex in val {
                let w = reference_walk(&plan, &registry, ex);
                correct += (w.final_label == ex.gold) as usize;
                lm += w.visited.contains(&plan.terminal.backend) as usize;
            }
            (correct, lm, tau)
        })
        .collect();
    let best = scored
        .iter()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(b.2.total_cmp(&a.2)))
        .unwrap();
    assert_eq!(cal.tau, best.2);
    assert!(cal.plan.stages.iter().all(|s| s.tau == best.2));
    for (p, s) in cal.sweep.iter().zip(&scored) {
        assert_eq!((p.correct, p.lm_invocations), (s.0, s.1));
    }
}

#[test]
fn forced_grids() {
    let config = WorldConfig::preset("table3like").unwrap();
    let mut small = config.clone();
    small.splits.train = 0;
    small.splits.test = 0;
    small.splits.val = 300;
    let world = generate_world(&small).unwrap();
    let registry = world.registry().unwrap();
    let (skeleton, _) = build_plan(&registry, &world.bundle, Split::Val, 0.5, Some(0.75), 0.5).unwrap();
    let skeleton = skeleton.without_augmented();
    let zero = calibrate_thresholds(&skeleton, &registry, &world.bundle, Split::Val, &[0.0], None, None).unwrap();
    assert_eq!((zero.tau, zero.sweep[0].lm_proportion), (0.0, 0.0));
    let one = calibrate_thresholds(&skeleton, &registry, &world.bundle, Split::Val, &[1.0], None, None).unwrap();
    assert_eq!(one.sweep[0].lm_proportion, 1.0);
}
