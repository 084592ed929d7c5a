use locflow_core::scheduler::trace::validate_trace;
use locflow_core::sim::{
    build_muon_pipeline, emit_report, simulate, simulate_traced, Crash, Placement, SimConfig,
    SimReport, StageValues,
};
use proptest::prelude::*;

fn run(config: &SimConfig) -> SimReport {
    simulate(config, &build_muon_pipeline(config.events).unwrap()).unwrap()
}

fn config(events: u64, n: u32, placement: Placement) -> SimConfig {
    SimConfig {
        events,
        n_clients: n,
        placement,
        ..SimConfig::default()
    }
}

/// Greedy list schedule of the Muon chain with no scheduler involved:
/// machines take the lowest-numbered runnable task (gen, then sim0..9,
/// digi0..9, reco0..9) whenever they are free; a task occupies its machine
/// for `o + cost`. Idle machines look again every `poll` seconds.
fn list_schedule(events: u64, n: usize, costs: StageValues<f64>, o: f64, poll: f64) -> f64 {
    let per = (events / 10) as f64;
    let mut tasks: Vec<(f64, Option<usize>)> = vec![(costs.gen * events as f64, None)];
    for (stage_cost, pred_base) in [
        (costs.sim, None),
        (costs.digi, Some(1)),
        (costs.reco, Some(11)),
    ] {
        for i in 0..10 {
            tasks.push((stage_cost * per, Some(pred_base.map_or(0, |b| b + i))));
        }
    }
    let mut done_at: Vec<Option<f64>> = vec![None; tasks.len()];
    let mut started = vec![false; tasks.len()];
    let mut free_at = vec![0.0f64; n];
    let mut makespan = 0.0f64;
    loop {
        if started.iter().all(|s| *s) {
            return makespan;
        }
        // The machine that asks next.
        let m = (0..n)
            .min_by(|a, b| free_at[*a].partial_cmp(&free_at[*b]).unwrap())
            .unwrap();
        let t = free_at[m];
        let runnable = (0..tasks.len()).find(|i| {
            !started[*i]
                && tasks[*i]
                    .1
                    .is_none_or(|p| done_at[p].is_some_and(|d| d <= t))
        });
        match runnable {
            Some(i) => {
                started[i] = true;
                let end = t + o + tasks[i].0;
                done_at[i] = Some(end);
                free_at[m] = end;
                makespan = makespan.max(end);
            }
            None => free_at[m] = t + poll,
        }
    }
}

#[test]
fn replicate_matches_list_schedule_oracle() {
    let d = SimConfig::default();
    for events in [100, 1000] {
        for n in [1u32, 2, 4, 8] {
            let sim = run(&config(events, n, Placement::Replicate)).makespan_secs;
            let oracle = list_schedule(
                events,
                n as usize,
                d.cost_per_event,
                d.overhead_secs,
                d.poll_interval_secs,
            );
            let err = (sim - oracle).abs() / oracle;
            assert!(err <= 0.02, "e={events} n={n}: sim {sim} oracle {oracle}");
        }
    }
}

/// The closed-form estimate: generation, plus ceil(10/n) tasks per later
/// stage, plus one overhead per task on the busiest client.
#[test]
fn group_a_eight_clients_within_ten_percent_of_formula() {
    let d = SimConfig::default();
    let (e, n) = (100u64, 8u64);
    let per = (e / 10) as f64;
    let stages =
        d.cost_per_event.sim * per + d.cost_per_event.digi * per + d.cost_per_event.reco * per;
    let busiest = 31u64.div_ceil(n) as f64;
    let formula = d.cost_per_event.gen * e as f64
        + (10u64.div_ceil(n)) as f64 * stages
        + busiest * d.overhead_secs;
    let sim = run(&config(e, n as u32, Placement::Replicate));
    let err = (sim.makespan_secs - formula).abs() / formula;
    assert!(err <= 0.10, "sim {} formula {formula}", sim.makespan_secs);
    let ratio = sim.makespan_secs / sim.baseline_secs;
    assert!((0.35..=0.65).contains(&ratio), "{ratio}");
}

#[test]
fn strict_placement_serialises_on_the_generator() {
    for n in [1, 2, 8] {
        let r = run(&config(100, n, Placement::Strict));
        assert_eq!(r.makespan_secs, 1300.0 + 31.0 * 40.0);
        assert_eq!(r.client_busy_secs.iter().filter(|b| **b > 0.0).count(), 1);
    }
}

#[test]
fn external_input_is_the_only_moved_input() {
    let p = build_muon_pipeline(100).unwrap().with_external_input(4096);
    for n in [1, 3] {
        let r = simulate(&config(100, n, Placement::Strict), &p).unwrap();
        assert_eq!(r.bytes_moved_input, 4096);
        assert_eq!(r.get_input_runs, 1);
        assert_eq!(r.done, 31);
        assert_eq!(r.locality_fraction, 1.0);
    }
}

#[test]
fn get_input_placement_fetches_every_partition_once() {
    let r = run(&config(100, 4, Placement::GetInput));
    assert_eq!(r.get_input_runs, 10);
    assert_eq!(r.bytes_moved_input, 10 * 100_000 * 10);
    assert_eq!(r.done, 31);
}

#[test]
fn crashed_client_work_moves_to_replica_holder() {
    let c = SimConfig {
        crashes: vec![Crash {
            client: 1,
            at_secs: 200.0,
        }],
        deadline_secs: 600,
        ..config(100, 2, Placement::Replicate)
    };
    let outcome = simulate_traced(&c, &build_muon_pipeline(100).unwrap()).unwrap();
    let r = &outcome.report;
    assert!(r.timeouts >= 1);
    assert_eq!(r.done, 31);
    assert_eq!(r.unfinished, 0);
    validate_trace(&outcome.trace).unwrap();
}

#[test]
fn crash_under_strict_placement_loses_the_data() {
    let c = SimConfig {
        crashes: vec![Crash {
            client: 0,
            at_secs: 150.0,
        }],
        deadline_secs: 600,
        ..config(100, 2, Placement::Strict)
    };
    let r = run(&c);
    // Client 0 held every partition; without a get-input application the
    // waiting workunits fail when their window closes.
    assert!(r.failed > 0);
    assert_eq!(r.unfinished, 0);
}

#[test]
fn reports_are_deterministic() {
    let c = SimConfig {
        start_jitter_secs: 30.0,
        seed: 42,
        ..config(100, 8, Placement::Replicate)
    };
    let a = emit_report(&[run(&c)]);
    let b = emit_report(&[run(&c)]);
    assert_eq!(a, b);
    let other = emit_report(&[run(&SimConfig { seed: 43, ..c })]);
    assert_ne!(a, other);
}

fn placement() -> impl Strategy<Value = Placement> {
    prop_oneof![
        Just(Placement::Strict),
        Just(Placement::Replicate),
        Just(Placement::GetInput)
    ]
}

fn arbitrary_config() -> impl Strategy<Value = SimConfig> {
    (
        prop_oneof![Just(10u64), Just(100), Just(1000)],
        1u32..=8,
        placement(),
        0.0f64..60.0,
        prop_oneof![Just(1.0f64), Just(5.0), Just(13.0)],
        prop::array::uniform4(0.0f64..8.0),
        0.0f64..20.0,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(
            |(events, n, placement, o, poll, c, jitter, seed, rpc)| SimConfig {
                events,
                n_clients: n,
                placement,
                overhead_secs: o,
                poll_interval_secs: poll,
                cost_per_event: StageValues {
                    gen: c[0],
                    sim: c[1],
                    digi: c[2],
                    reco: c[3],
                },
                start_jitter_secs: jitter,
                seed,
                poll_via_rpc: rpc,
                ..SimConfig::default()
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simulator_invariants(c in arbitrary_config()) {
        let p = build_muon_pipeline(c.events).unwrap();
        let out = simulate_traced(&c, &p).unwrap();
        let r = &out.report;
        // Liveness and trace validity.
        prop_assert_eq!(r.done, 31);
        prop_assert_eq!(r.unfinished, 0);
        prop_assert!(validate_trace(&out.trace).is_ok());
        // Conservation: every task ran exactly once.
        let busy: f64 = r.client_busy_secs.iter().sum();
        prop_assert!((busy - r.baseline_secs).abs() < 1e-6);
        prop_assert!((r.executed_task_secs - r.baseline_secs).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&r.locality_fraction));
        prop_assert_eq!(r.compute_jobs, 31);
        match c.placement {
            Placement::Strict => {
                prop_assert_eq!(r.bytes_moved_input, 0);
                prop_assert_eq!(r.locality_fraction, 1.0);
            }
            Placement::Replicate => prop_assert_eq!(r.get_input_runs, 0),
            Placement::GetInput => prop_assert_eq!(r.get_input_runs, 10),
        }
        prop_assert!(r.makespan_secs + 1e-9 >= r.baseline_secs / c.n_clients as f64);
        // Determinism.
        prop_assert_eq!(simulate(&c, &p).unwrap(), out.report.clone());
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn makespan_does_not_grow_with_clients_without_overhead(
        events in prop_oneof![Just(10u64), Just(100), Just(1000)],
        placement in placement(),
        c in prop::array::uniform4(0.0f64..8.0),
    ) {
        let mut last = f64::INFINITY;
        for n in 1..=8 {
            let r = run(&SimConfig {
                events,
                n_clients: n,
                placement,
                overhead_secs: 0.0,
                cost_per_event: StageValues { gen: c[0], sim: c[1], digi: c[2], reco: c[3] },
                ..SimConfig::default()
            });
            prop_assert!(r.makespan_secs <= last + 1e-9, "n={} {} > {}", n, r.makespan_secs, last);
            last = r.makespan_secs;
        }
    }
}

#[test]
fn single_client_no_overhead_is_the_baseline_for_every_placement() {
    for placement in [Placement::Strict, Placement::Replicate] {
        for events in [10, 100, 1000] {
            let r = run(&SimConfig {
                overhead_secs: 0.0,
                ..config(events, 1, placement)
            });
            assert_eq!(r.makespan_secs, r.baseline_secs);
        }
    }
}
