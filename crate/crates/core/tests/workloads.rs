// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use diasys::event_model::EventTypeRegistry;
use diasys::workloads::{
    bank_atm, generate_workload, interleaved_fraction, lock_bench, read_event_log, write_event_log,
    BankAtmParams, InstrKind, LockBenchParams, LogEntry, WorkloadKind, WorkloadSpec,
};
use proptest::prelude::*;

fn bank(seed: u64, n: u32, max_wait: u32) -> WorkloadSpec {
    WorkloadSpec {
        seed,
        cpus: 3,
        duration: 1 << 26,
        kind: WorkloadKind::BankAtm(BankAtmParams {
            n_transactions: n,
            max_wait,
            initial_balance: 1_000_000,
        }),
    }
}

fn locks(seed: u64, threads: u8, mutexes: u32) -> WorkloadSpec {
    WorkloadSpec {
        seed,
        cpus: threads,
        duration: 50_000,
        kind: WorkloadKind::LockBench(LockBenchParams {
            n_threads: threads,
            n_mutexes: mutexes,
            work_min: 10,
            work_max: 300,
            hold_min: 5,
            hold_max: 100,
        }),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interleaving_matches_pairwise_scan(seed in 0u64..10_000, n in 1u32..40, wait in 0u32..3000) {
        let w = generate_workload(&bank(seed, n, wait)).unwrap();
        let f = interleaved_fraction(&w.truth).unwrap();
        prop_assert!((f - common::interleaved_oracle(&w.truth)).abs() < 1e-12);
        prop_assert_eq!(w.truth.conflicting_arrivals() as u64, common::race_oracle(&w.truth));
    }

    #[test]
    fn bank_oracle_is_visible_in_the_trace(seed in 0u64..10_000, n in 1u32..20) {
        let w = generate_workload(&bank(seed, n, 500)).unwrap();
        let bank_stream = &w.streams[0];
        for t in &w.truth.transactions {
            let get = bank_stream.iter().find(|r| r.cycle == t.get_cycle).unwrap();
            prop_assert_eq!(get.kind, InstrKind::Call);
            prop_assert_eq!(get.pc, bank_atm::layout::GET_BALANCE);
            if let Some(s) = t.set_cycle {
                let set = bank_stream.iter().find(|r| r.cycle == s).unwrap();
                prop_assert_eq!(set.kind, InstrKind::ReturnSite);
            }
        }
    }

    #[test]
    fn lock_acquisitions_are_ordered(seed in 0u64..10_000, threads in 1u8..5, mutexes in 1u32..4) {
        let w = generate_workload(&locks(seed, threads, mutexes)).unwrap();
        for (addr, acqs) in &w.truth.acquisitions {
            prop_assert!(acqs.iter().all(|a| a.return_cycle > a.call_cycle));
            prop_assert!(*addr >= lock_bench::layout::MUTEX_BASE as u64);
        }
        let calls: usize = w.streams.iter().flatten()
            .filter(|r| r.kind == InstrKind::Call && r.pc == lock_bench::layout::MUTEX_LOCK)
            .count();
        prop_assert_eq!(calls, w.truth.total_acquisitions());
    }

    #[test]
    fn generation_is_a_pure_function_of_the_spec(seed in 0u64..1000) {
        let a = generate_workload(&locks(seed, 3, 2)).unwrap();
        let b = generate_workload(&locks(seed, 3, 2)).unwrap();
        prop_assert_eq!(a.streams, b.streams);
        prop_assert_eq!(a.truth, b.truth);
    }
}

#[test]
fn single_thread_never_contends() {
    let w = generate_workload(&locks(3, 1, 1)).unwrap();
    let acqs = &w.truth.acquisitions.values().next().unwrap();
    assert!(acqs.windows(2).all(|p| p[0].return_cycle < p[1].call_cycle));
}

#[test]
fn no_wait_forces_overlap() {
    let w = generate_workload(&bank(1, 5, 0)).unwrap();
    assert!(!w.truth.overlapping_pairs.is_empty());
}

#[test]
fn tuned_preset_interleaving() {
    let w = generate_workload(&bank_atm::tuned_preset()).unwrap();
    let f = interleaved_fraction(&w.truth).unwrap();
    assert!((f - 0.44).abs() <= 0.05, "{f}");
}

#[test]
fn event_log_round_trip() {
    use diasys::apps::race_check_app;
    use diasys::event_gen::GeneratorConfig;
    use diasys::platform::primary_events;
    let reg = EventTypeRegistry::builtin();
    let w = generate_workload(&bank(9, 10, 300)).unwrap();
    let app = race_check_app(0);
    let (inputs, _) = primary_events(&app.graph, &app.triggers, &w.streams, &reg, &GeneratorConfig::default()).unwrap();
    let entries: Vec<LogEntry> = inputs["eg0"]
        .iter()
        .map(|(_, e)| LogEntry { cpu: 0, event: e.clone() })
        .collect();
    assert!(!entries.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_event_log(&reg, &entries, &path).unwrap();
    assert_eq!(read_event_log(&reg, &path).unwrap(), entries);
}
