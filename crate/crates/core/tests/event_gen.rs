// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use diasys::event_gen::{
    CaptureSpec, ConfigError, EventGenerator, GeneratorConfig, TriggerCondition, TriggerKind,
};
use diasys::event_model::{EventSchema, EventTypeId, FieldKind, FieldSpec, Value};
use diasys::workloads::rng::SplitMix64;
use diasys::workloads::{InstrKind, StoreWord, TraceRecord, Writeback};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Every watched return is reported exactly once, at the resume cycle.
    #[test]
    fn returns_match_call_stack(seed in any::<u64>(), depth in 1usize..=32, budget in 1usize..80, dive in any::<bool>()) {
        let types = registry_with_return_event();
        let mut rng = SplitMix64::new(seed);
        let tree = random_call_tree(&mut rng, 40, depth, budget, dive);
        let watched: Vec<usize> = (0..40).filter(|f| (seed >> (f % 64)) & 1 == 1).take(12).collect();
        let mut eg = EventGenerator::new(GeneratorConfig::default());
        for (i, &f) in watched.iter().enumerate() {
            eg.configure_trigger(&types, return_trigger(i as u16, f)).unwrap();
        }
        let got: Vec<(u32, u64)> = eg.run(&tree.records).into_iter().map(|(c, e)| (c, e.int(0).unwrap())).collect();
        let want: Vec<(u32, u64)> = tree.returns.iter()
            .filter(|(_, f)| watched.contains(f))
            .map(|&(c, f)| (c, f as u64))
            .collect();
        prop_assert_eq!(got, want);
        prop_assert!(eg.pending_returns().is_empty());
    }

    /// PC-match triggers are stateless: the event count equals the number
    /// of records at that PC, whatever comes around them.
    #[test]
    fn pc_match_counts(pcs in prop::collection::vec(0u32..8, 0..200)) {
        let types = registry_with_return_event();
        let mut eg = EventGenerator::new(GeneratorConfig::default());
        eg.configure_trigger(&types, TriggerCondition {
            id: 0,
            kind: TriggerKind::PcMatch { pc: 12 },
            capture: CaptureSpec { registers: vec![11], arg_count: 0, include_timestamp: true },
            emit_type: RET_EVENT,
        }).unwrap();
        let recs: Vec<TraceRecord> = pcs.iter().enumerate()
            .map(|(i, p)| TraceRecord::plain(0, i as u32, p * 4))
            .collect();
        let expected = pcs.iter().filter(|&&p| p == 3).count();
        prop_assert_eq!(eg.run(&recs).len(), expected);
    }
}

const ARGS_EVENT: EventTypeId = EventTypeId(0x0101);

fn args_registry(n: usize) -> diasys::event_model::EventTypeRegistry {
    let mut r = registry_with_return_event();
    let fields = (0..n).map(|i| FieldSpec::new(format!("a{i}"), FieldKind::U32)).collect();
    r.register(ARGS_EVENT, EventSchema::new("EV_ARGS", false, fields)).unwrap();
    r
}

#[test]
fn stack_arguments_come_from_the_shadow() {
    let types = args_registry(8);
    let mut eg = EventGenerator::new(GeneratorConfig::default());
    eg.configure_trigger(&types, TriggerCondition {
        id: 0,
        kind: TriggerKind::PcMatch { pc: 0x4000 },
        capture: CaptureSpec { registers: vec![], arg_count: 8, include_timestamp: false },
        emit_type: ARGS_EVENT,
    })
    .unwrap();
    let sp = 0x8000;
    let mut recs = Vec::new();
    let mut push = |mut r: TraceRecord| {
        r.cycle = recs.len() as u32;
        recs.push(r);
    };
    let wb = |pc, reg, value| TraceRecord { writeback: Some(Writeback { reg, value }), ..TraceRecord::plain(0, 0, pc) };
    push(wb(0x100, 1, sp));
    for (i, reg) in (3u8..=8).enumerate() {
        push(wb(0x104, reg, 10 + i as u32));
    }
    for (k, v) in [(0i16, 70u32), (4, 80)] {
        push(TraceRecord {
            kind: InstrKind::StoreWord,
            store: Some(StoreWord { base_reg: 1, offset: k, value: v }),
            ..TraceRecord::plain(0, 0, 0x108)
        });
    }
    push(wb(0x10c, 9, 0x114));
    push(TraceRecord::plain(0, 0, 0x110));
    push(TraceRecord { kind: InstrKind::Call, link_address: 0x114, ..TraceRecord::plain(0, 0, 0x4000) });
    let events = eg.run(&recs);
    assert_eq!(events.len(), 1);
    let want: Vec<Value> = [10, 11, 12, 13, 14, 15, 70, 80].iter().map(|&v| Value::Int(v)).collect();
    assert_eq!(events[0].1.payload, want);
    assert_eq!(eg.stats().stack_shadow_misses, 0);
}

#[test]
fn unseen_stack_arguments_are_zero_and_counted() {
    let types = args_registry(7);
    let mut eg = EventGenerator::new(GeneratorConfig::default());
    eg.configure_trigger(&types, TriggerCondition {
        id: 0,
        kind: TriggerKind::PcMatch { pc: 0x40 },
        capture: CaptureSpec { registers: vec![], arg_count: 7, include_timestamp: false },
        emit_type: ARGS_EVENT,
    })
    .unwrap();
    let ev = eg.step(&TraceRecord::plain(0, 0, 0x40));
    assert_eq!(ev[0].payload[6], Value::Int(0));
    assert_eq!(eg.stats().stack_shadow_misses, 1);
}

#[test]
fn trigger_capacity_is_enforced() {
    let types = registry_with_return_event();
    let mut eg = EventGenerator::new(GeneratorConfig::default());
    for f in 0..12 {
        eg.configure_trigger(&types, return_trigger(f as u16, f)).unwrap();
    }
    assert_eq!(
        eg.configure_trigger(&types, return_trigger(12, 12)),
        Err(ConfigError::TriggerCapacityExceeded { capacity: 12 })
    );
}

#[test]
fn chains_deeper_than_the_stack_overflow_it() {
    let types = registry_with_return_event();
    let mut eg = EventGenerator::new(GeneratorConfig { ras_depth: 4, ..GeneratorConfig::default() });
    for f in 0..6 {
        eg.configure_trigger(&types, return_trigger(f as u16, f)).unwrap();
    }
    let mut rng = SplitMix64::new(1);
    // a chain 0 -> 1 -> ... -> 5 overflows a four-entry stack
    let tree = loop {
        let t = random_call_tree(&mut rng, 6, 6, 6, true);
        if t.max_depth == 6 {
            break t;
        }
    };
    let got = eg.run(&tree.records);
    assert!(eg.stats().ras_overflows >= 2);
    assert!(got.len() < tree.returns.len());
}
