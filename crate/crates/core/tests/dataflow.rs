// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use diasys::apps::behavior_registry;
use diasys::dataflow::{
    classify_determinism, run_schedule, validate_graph, ActorGraph, Application, Arity, Behavior,
    BehaviorFault, BehaviorInfo, BehaviorRegistry, FiringRule, GraphError, Outputs, Scheduler,
    SourceInputs,
};
use diasys::event_model::{Event, EventTypeRegistry};
use proptest::prelude::*;

const PIPELINE: &str = r#"
[[sources]]
name = "eg0"
kind = "generator"
cpu = 0
outputs = [
    { port = "call", types = ["EV_LOCK_CALL"] },
    { port = "ret", types = ["EV_LOCK_RETURN"] },
]

[[actors]]
name = "diff"
behavior = "ta_diff"
inputs = ["call", "ret"]
outputs = ["acq"]

[[actors]]
name = "tap"
behavior = "passthrough"
inputs = ["in"]
outputs = ["out"]

[[sinks]]
name = "log"
kind = "event_log"
inputs = ["in"]

[[channels]]
from = "eg0.call"
to = "diff.call"
capacity = 2

[[channels]]
from = "eg0.ret"
to = "diff.ret"
capacity = 2

[[channels]]
from = "diff.acq"
to = "tap.in"
capacity = 1

[[channels]]
from = "tap.out"
to = "log.in"
"#;

fn pipeline() -> ActorGraph {
    toml::from_str(PIPELINE).unwrap()
}

fn untimed(pairs: u32, hold: u32) -> SourceInputs {
    let t = lock_burst(&["eg0"], pairs, 10, hold, 3);
    t.into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|(_, e)| e).collect()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deterministic_graph_is_schedule_independent(seed in any::<u64>(), pairs in 1u32..60, hold in 0u32..9) {
        let types = EventTypeRegistry::builtin();
        let reg = behavior_registry();
        let inputs = untimed(pairs, hold);
        let mut a = Application::new(&pipeline(), &types, &reg).unwrap();
        prop_assert!(classify_determinism(a.graph(), a.topology()).is_deterministic());
        let reference = run_schedule(&mut a, &inputs, Scheduler::FifoRoundRobin);
        let mut b = Application::new(&pipeline(), &types, &reg).unwrap();
        let random = run_schedule(&mut b, &inputs, Scheduler::SeededRandom(seed));
        prop_assert_eq!(random.sink_bytes(&types), reference.sink_bytes(&types));
        prop_assert_eq!(reference.sinks["log"].len(), pairs as usize);
        prop_assert_eq!(random.stats.fifo_violations, 0);
    }
}

#[test]
fn validation_reports_every_problem() {
    let types = EventTypeRegistry::builtin();
    let mut g = pipeline();
    g.channels[2].to = "nowhere.in".into();
    g.channels[3].from = "tap-out".into();
    g.actors[1].behavior = "mystery".into();
    let errs = validate_graph(&g, &types, &behavior_registry()).unwrap_err();
    assert!(errs.iter().any(|e| matches!(e, GraphError::DanglingEndpoint(..))));
    assert!(errs.iter().any(|e| matches!(e, GraphError::MalformedEndpoint(_))));
    assert!(errs.iter().any(|e| matches!(e, GraphError::UnknownBehavior { .. })));
}

#[test]
fn fan_out_needs_distinct_ports() {
    let types = EventTypeRegistry::builtin();
    let mut g = pipeline();
    let mut dup = g.channels[3].clone();
    dup.to = "log.in".into();
    g.channels.push(dup);
    let errs = validate_graph(&g, &types, &behavior_registry()).unwrap_err();
    assert!(errs.contains(&GraphError::MultipleConsumers("tap.out".into())));
}

#[test]
fn untyped_route_is_rejected() {
    let types = EventTypeRegistry::builtin();
    let mut g = pipeline();
    g.sources[0].outputs[1].types = vec!["EV_NOT_A_TYPE".into()];
    let errs = validate_graph(&g, &types, &behavior_registry()).unwrap_err();
    assert!(matches!(&errs[..], [GraphError::UnknownEventType { .. }]));
}

/// Fails on every other firing.
struct Flaky(u64);

impl Behavior for Flaky {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault> {
        self.0 += 1;
        for e in inputs.iter().flatten() {
            out.push(0, e.clone())?;
        }
        if self.0.is_multiple_of(2) {
            return Err(BehaviorFault("flaky".into()));
        }
        Ok(())
    }
}

#[test]
fn faults_drop_the_firing_and_continue() {
    let types = EventTypeRegistry::builtin();
    let mut reg = behavior_registry();
    reg.register(
        "flaky",
        BehaviorInfo {
            inputs: Arity::Exactly(1),
            outputs: Arity::Exactly(1),
            default_rule: FiringRule::AllOneEach,
            pure: false,
            output_types: vec![],
        },
        |_, _| Ok(Box::new(Flaky(0))),
    );
    let mut g = pipeline();
    g.actors[1].behavior = "flaky".into();
    let mut app = Application::new(&g, &types, &reg).unwrap();
    assert!(!classify_determinism(app.graph(), app.topology()).is_deterministic());
    let out = run_schedule(&mut app, &untimed(10, 3), Scheduler::FifoRoundRobin);
    assert_eq!(out.sinks["log"].len(), 5);
    assert_eq!(out.stats.faults.iter().sum::<u64>(), 5);
}

#[test]
fn stuck_inputs_are_reported() {
    let types = EventTypeRegistry::builtin();
    let mut inputs = untimed(4, 3);
    // drop the returns: every call waits forever for its partner
    let calls: Vec<Event> = inputs["eg0"].iter().step_by(2).cloned().collect();
    inputs.insert("eg0".into(), calls);
    let mut app = Application::new(&pipeline(), &types, &behavior_registry()).unwrap();
    let out = run_schedule(&mut app, &inputs, Scheduler::FifoRoundRobin);
    assert!(out.sinks["log"].is_empty());
    let stuck = &out.stats.no_progress;
    assert_eq!(stuck.len(), 1);
    assert_eq!(stuck[0].actor, "diff");
    assert_eq!(stuck[0].pending, vec![("call".to_string(), 2)]);
}

#[test]
fn registry_lists_builtins() {
    let reg: BehaviorRegistry = behavior_registry();
    let names: Vec<&str> = reg.names().collect();
    for n in ["count", "passthrough", "ta_check_balance_trans", "ta_diff", "ta_stat"] {
        assert!(names.contains(&n), "{n}");
    }
}
