// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Instantiated applications and the untimed reference scheduler.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    validate_graph, ActorGraph, Behavior, BehaviorFault, BehaviorRegistry, FiringRule,
    GraphError, NodeRef, Outputs, SourceKind, Topology,
};
use crate::event_model::{encode_event, Event, EventTypeRegistry};
use crate::workloads::rng::SplitMix64;

/// Primary events per generator source name, in emission order.
pub type SourceInputs = BTreeMap<String, Vec<Event>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    FifoRoundRobin,
    SeededRandom(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SinkRecord {
    /// Sink input port the event arrived on.
    pub port: usize,
    pub event: Event,
}

/// An actor left holding events it can never fire on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NoProgress {
    pub actor: String,
    /// `(input port, queued events)` for every non-empty input.
    pub pending: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub firings: Vec<u64>,
    pub faults: Vec<u64>,
    pub channel_events: Vec<u64>,
    pub channel_bytes: Vec<u64>,
    /// Generator events whose type no source port carries.
    pub unrouted: u64,
    pub fifo_violations: u64,
    pub no_progress: Vec<NoProgress>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunOutput {
    pub sinks: BTreeMap<String, Vec<SinkRecord>>,
    pub stats: RunStats,
}

impl RunOutput {
    /// Concatenated wire encoding of each sink's events, for exact comparison.
    pub fn sink_bytes(&self, types: &EventTypeRegistry) -> BTreeMap<String, Vec<u8>> {
        self.sinks
            .iter()
            .map(|(name, recs)| {
                let mut bytes = Vec::new();
                for r in recs {
                    bytes.push(r.port as u8);
                    bytes.extend(encode_event(types, &r.event).expect("validated event"));
                }
                (name.clone(), bytes)
            })
            .collect()
    }
}

/// FIFO channel queues with traffic counters.
#[derive(Debug, Clone)]
pub struct ChannelState {
    queues: Vec<VecDeque<(u64, Event)>>,
    capacity: Vec<Option<usize>>,
    last_popped: Vec<Option<u64>>,
    next_seq: u64,
    pub events: Vec<u64>,
    pub bytes: Vec<u64>,
    pub fifo_violations: u64,
}

impl ChannelState {
    pub fn new(topo: &Topology) -> Self {
        let n = topo.channels.len();
        Self {
            queues: vec![VecDeque::new(); n],
            capacity: topo.channels.iter().map(|c| c.capacity).collect(),
            last_popped: vec![None; n],
            next_seq: 0,
            events: vec![0; n],
            bytes: vec![0; n],
            fifo_violations: 0,
        }
    }

    pub fn push(&mut self, ch: usize, event: Event, size: usize) {
        self.events[ch] += 1;
        self.bytes[ch] += size as u64;
        self.queues[ch].push_back((self.next_seq, event));
        self.next_seq += 1;
    }

    pub fn pop(&mut self, ch: usize) -> Option<Event> {
        let (seq, e) = self.queues[ch].pop_front()?;
        if self.last_popped[ch].is_some_and(|last| last >= seq) {
            self.fifo_violations += 1;
        }
        self.last_popped[ch] = Some(seq);
        Some(e)
    }

    pub fn len(&self, ch: usize) -> usize {
        self.queues[ch].len()
    }

    pub fn is_empty(&self, ch: usize) -> bool {
        self.queues[ch].is_empty()
    }

    pub fn is_full(&self, ch: usize) -> bool {
        self.capacity[ch].is_some_and(|c| self.queues[ch].len() >= c)
    }

    /// Arrival sequence number of the head event.
    pub fn head_seq(&self, ch: usize) -> Option<u64> {
        self.queues[ch].front().map(|(s, _)| *s)
    }
}

/// A validated graph with one live behavior per actor.
pub struct Application {
    graph: ActorGraph,
    topo: Topology,
    types: EventTypeRegistry,
    behaviors: Vec<Box<dyn Behavior>>,
}

impl std::fmt::Debug for Application {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Application")
            .field("graph", &self.graph)
            .finish_non_exhaustive()
    }
}

impl Application {
    pub fn new(
        graph: &ActorGraph,
        types: &EventTypeRegistry,
        registry: &BehaviorRegistry,
    ) -> Result<Self, Vec<GraphError>> {
        let topo = validate_graph(graph, types, registry)?;
        let mut behaviors = Vec::with_capacity(graph.actors.len());
        for a in &graph.actors {
            let b = registry.build(&a.behavior, &a.params, types).map_err(|reason| {
                vec![GraphError::BehaviorConfig {
                    actor: a.name.clone(),
                    reason,
                }]
            })?;
            behaviors.push(b);
        }
        Ok(Self {
            graph: graph.clone(),
            topo,
            types: types.clone(),
            behaviors,
        })
    }

    pub fn graph(&self) -> &ActorGraph {
        &self.graph
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn types(&self) -> &EventTypeRegistry {
        &self.types
    }

    pub fn wire_size(&self, e: &Event) -> usize {
        self.types.wire_size_unchecked(e)
    }

    /// Output channel for a generator event, chosen by its type.
    pub fn route(&self, source: usize, event: &Event) -> Option<usize> {
        self.topo.source_types[source]
            .iter()
            .position(|port| port.contains(&event.type_id))
            .map(|p| self.topo.source_outputs[source][p])
    }

    /// Whether the firing rule of `actor` is satisfied.
    pub fn ready(&self, actor: usize, ch: &ChannelState) -> bool {
        let inputs = &self.topo.actor_inputs[actor];
        match &self.topo.rules[actor] {
            FiringRule::AllOneEach => inputs.iter().all(|&c| !ch.is_empty(c)),
            FiringRule::Counts(n) => inputs.iter().zip(n).all(|(&c, &k)| ch.len(c) >= k),
            FiringRule::AnyInput => inputs.iter().any(|&c| !ch.is_empty(c)),
        }
    }

    pub fn outputs_blocked(&self, actor: usize, ch: &ChannelState) -> bool {
        self.topo.actor_outputs[actor].iter().any(|&c| ch.is_full(c))
    }

    /// Dequeues the events one firing of `actor` consumes.
    pub fn take_inputs(&self, actor: usize, ch: &mut ChannelState) -> Vec<Vec<Event>> {
        let inputs = &self.topo.actor_inputs[actor];
        let mut taken = vec![Vec::new(); inputs.len()];
        match &self.topo.rules[actor] {
            FiringRule::AllOneEach => {
                for (i, &c) in inputs.iter().enumerate() {
                    taken[i].extend(ch.pop(c));
                }
            }
            FiringRule::Counts(n) => {
                for (i, (&c, &k)) in inputs.iter().zip(n).enumerate() {
                    for _ in 0..k {
                        taken[i].extend(ch.pop(c));
                    }
                }
            }
            FiringRule::AnyInput => {
                // oldest arrival first; sequence numbers are unique, so the
                // lower-index tie-break only matters for equal heads
                let pick = inputs
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &c)| ch.head_seq(c).map(|s| (s, i)))
                    .min();
                if let Some((_, i)) = pick {
                    taken[i].extend(ch.pop(inputs[i]));
                }
            }
        }
        taken
    }

    /// Runs one firing; on a fault, the outputs of the firing are dropped.
    pub fn fire(&mut self, actor: usize, inputs: &[Vec<Event>]) -> Result<Vec<Vec<Event>>, BehaviorFault> {
        let mut out = Outputs::new(self.topo.actor_outputs[actor].len());
        self.behaviors[actor].fire(inputs, &mut out)?;
        let ports = out.into_ports();
        for e in ports.iter().flatten() {
            self.types
                .wire_size(e)
                .map_err(|err| BehaviorFault(format!("emitted invalid event: {err}")))?;
        }
        Ok(ports)
    }

    /// Stuck actors after a run ends.
    pub fn no_progress(&self, ch: &ChannelState) -> Vec<NoProgress> {
        self.graph
            .actors
            .iter()
            .enumerate()
            .filter_map(|(a, spec)| {
                let pending: Vec<(String, usize)> = self.topo.actor_inputs[a]
                    .iter()
                    .zip(&spec.inputs)
                    .filter(|(&c, _)| !ch.is_empty(c))
                    .map(|(&c, name)| (name.clone(), ch.len(c)))
                    .collect();
                (!pending.is_empty()).then(|| NoProgress {
                    actor: spec.name.clone(),
                    pending,
                })
            })
            .collect()
    }

    /// Diagnostic counters reported by the behavior of `actor`.
    pub fn diagnostics(&self, actor: usize) -> Vec<(String, u64)> {
        self.behaviors[actor].diagnostics()
    }

    pub fn flush_event(&self, source: usize, ts: u32) -> Event {
        let ty = self.topo.source_types[source][0][0];
        let has_ts = self.types.schema(ty).map(|s| s.timestamp).unwrap_or(false);
        Event::new(ty, has_ts.then_some(ts), vec![])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proc {
    Source(usize),
    Actor(usize),
}

/// Runs `app` to quiescence over `inputs` without a notion of time.
///
/// Flush sources fire once each, when nothing else can make progress.
pub fn run_schedule(app: &mut Application, inputs: &SourceInputs, scheduler: Scheduler) -> RunOutput {
    let topo = app.topology().clone();
    let mut ch = ChannelState::new(&topo);
    let n_sources = app.graph().sources.len();
    let n_actors = app.graph().actors.len();
    let empty = Vec::new();
    let streams: Vec<&Vec<Event>> = app
        .graph()
        .sources
        .iter()
        .map(|s| match s.kind {
            SourceKind::Generator { .. } => inputs.get(&s.name).unwrap_or(&empty),
            SourceKind::Flush { .. } => &empty,
        })
        .collect();
    let mut cursor = vec![0usize; n_sources];
    let mut flushed: Vec<bool> = app
        .graph()
        .sources
        .iter()
        .map(|s| !matches!(s.kind, SourceKind::Flush { .. }))
        .collect();
    let procs: Vec<Proc> = (0..n_sources)
        .map(Proc::Source)
        .chain((0..n_actors).map(Proc::Actor))
        .collect();
    let mut rng = match scheduler {
        Scheduler::SeededRandom(seed) => Some(SplitMix64::new(seed)),
        Scheduler::FifoRoundRobin => None,
    };
    let mut rr = 0usize;
    let mut out = RunOutput::default();
    for s in &app.graph().sinks {
        out.sinks.insert(s.name.clone(), Vec::new());
    }
    let mut stats = RunStats {
        firings: vec![0; n_actors],
        faults: vec![0; n_actors],
        ..Default::default()
    };
    let mut last_ts = 0u32;
    let sink_names: Vec<String> = app.graph().sinks.iter().map(|s| s.name.clone()).collect();

    loop {
        // Skip unrouted generator events; they can never be delivered.
        for s in 0..n_sources {
            while cursor[s] < streams[s].len() && app.route(s, &streams[s][cursor[s]]).is_none() {
                stats.unrouted += 1;
                cursor[s] += 1;
            }
        }
        let enabled: Vec<usize> = procs
            .iter()
            .enumerate()
            .filter(|(_, p)| match **p {
                Proc::Source(s) => streams[s]
                    .get(cursor[s])
                    .and_then(|e| app.route(s, e))
                    .is_some_and(|c| !ch.is_full(c)),
                Proc::Actor(a) => app.ready(a, &ch) && !app.outputs_blocked(a, &ch),
            })
            .map(|(i, _)| i)
            .collect();

        if enabled.is_empty() {
            if let Some(f) = flushed.iter().position(|done| !done) {
                flushed[f] = true;
                let e = app.flush_event(f, last_ts);
                let c = topo.source_outputs[f][0];
                let size = app.wire_size(&e);
                ch.push(c, e, size);
                drain_sinks(&topo, &sink_names, &mut ch, &mut out);
                continue;
            }
            break;
        }

        let pick = match rng.as_mut() {
            Some(r) => enabled[r.range_inclusive(0, enabled.len() as u64 - 1) as usize],
            None => {
                let next = enabled
                    .iter()
                    .copied()
                    .find(|&i| i >= rr)
                    .unwrap_or(enabled[0]);
                rr = (next + 1) % procs.len();
                next
            }
        };

        match procs[pick] {
            Proc::Source(s) => {
                let e = streams[s][cursor[s]].clone();
                cursor[s] += 1;
                if let Some(ts) = e.ts {
                    last_ts = last_ts.max(ts);
                }
                let c = app.route(s, &e).expect("enabled sources route");
                let size = app.wire_size(&e);
                ch.push(c, e, size);
            }
            Proc::Actor(a) => {
                let taken = app.take_inputs(a, &mut ch);
                stats.firings[a] += 1;
                match app.fire(a, &taken) {
                    Ok(ports) => {
                        for (p, events) in ports.into_iter().enumerate() {
                            let c = topo.actor_outputs[a][p];
                            for e in events {
                                let size = app.wire_size(&e);
                                ch.push(c, e, size);
                            }
                        }
                    }
                    Err(fault) => {
                        stats.faults[a] += 1;
                        log::warn!("actor {}: {fault}", app.graph().actors[a].name);
                    }
                }
            }
        }
        drain_sinks(&topo, &sink_names, &mut ch, &mut out);
    }

    stats.no_progress = app.no_progress(&ch);
    for np in &stats.no_progress {
        log::warn!("no progress: actor {} holds {:?}", np.actor, np.pending);
    }
    stats.channel_events = ch.events.clone();
    stats.channel_bytes = ch.bytes.clone();
    stats.fifo_violations = ch.fifo_violations;
    out.stats = stats;
    out
}

fn drain_sinks(topo: &Topology, names: &[String], ch: &mut ChannelState, out: &mut RunOutput) {
    // Deliver in arrival order across all sink channels.
    let mut ready: Vec<(u64, usize)> = Vec::new();
    for (c, chan) in topo.channels.iter().enumerate() {
        if let NodeRef::Sink(_) = chan.to.0 {
            ready.extend(ch.queues[c].iter().map(|(seq, _)| (*seq, c)));
        }
    }
    ready.sort_unstable();
    for (_, c) in ready {
        let (NodeRef::Sink(s), port) = topo.channels[c].to else {
            unreachable!()
        };
        let event = ch.pop(c).expect("queued");
        out.sinks
            .get_mut(&names[s])
            .expect("sink present")
            .push(SinkRecord { port, event });
    }
}
