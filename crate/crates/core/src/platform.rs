// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Execution platform: processing nodes, actor placement and a timed
//! discrete-event execution of a deployed application.
//!
//! Event generators sit on chip next to their CPU; flush timers and sinks
//! sit on the host. An event crossing from an on-chip producer to a host
//! consumer travels over the off-chip link and is metered there.
//!
//! An on-chip node owns a bounded run queue. Events from other nodes or from
//! generators enter through it; events between actors on the same node are
//! handed over directly. A node fires one actor at a time and runs each
//! firing to completion before it looks at its queue again.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{
    ActorGraph, Application, ChannelState, NoProgress, NodeRef, SinkRecord, SourceKind,
};
use crate::event_gen::{ConfigError, EventGenerator, GeneratorConfig, GeneratorStats, TriggerCondition};
use crate::event_model::{Event, EventTypeRegistry};
use crate::metering::{CutCounters, DEFAULT_CLOCK_HZ};
use crate::workloads::{CpuId, TraceRecord};

pub const DEFAULT_RUN_QUEUE: usize = 16;
pub const DEFAULT_CYCLES_PER_FIRING: u32 = 200;
/// Name of the automatically derived chip-to-host cut.
pub const OFFCHIP_CUT: &str = "offchip";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    OnChip,
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    DiagnosisProcessor,
    FixedFunction,
    Soft,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverloadPolicy {
    /// Hold back the producer until the run queue has room.
    #[default]
    Stall,
    /// Drop events arriving at a full run queue.
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub location: Location,
    pub kind: NodeKind,
    /// On-chip run queue capacity; defaults to 16. Host queues are unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_queue: Option<usize>,
    /// Defaults to 200 cycles on chip and 0 on the host.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles_per_firing: Option<u32>,
    /// Per-behavior firing cost overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub behavior_cycles: BTreeMap<String, u32>,
    /// Behaviors a fixed-function node implements.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub supports: Vec<String>,
}

impl NodeSpec {
    pub fn on_chip(id: &str) -> Self {
        Self {
            id: id.into(),
            location: Location::OnChip,
            kind: NodeKind::DiagnosisProcessor,
            run_queue: None,
            cycles_per_firing: None,
            behavior_cycles: BTreeMap::new(),
            supports: Vec::new(),
        }
    }

    pub fn host(id: &str) -> Self {
        Self {
            location: Location::Host,
            kind: NodeKind::Soft,
            ..Self::on_chip(id)
        }
    }
}

/// Additional metered cut: every channel from one of `producers` to one of
/// `consumers`. A trailing `*` matches any name with that prefix, so `"*"`
/// alone matches every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutSpec {
    pub name: String,
    pub producers: Vec<String>,
    pub consumers: Vec<String>,
}

/// Actor name to node id.
pub type Mapping = BTreeMap<String, String>;

fn default_clock() -> u64 {
    DEFAULT_CLOCK_HZ
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub nodes: Vec<NodeSpec>,
    pub mapping: Mapping,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cuts: Vec<CutSpec>,
    /// Off-chip link bandwidth cap in bit/s; uncapped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_bandwidth_bps: Option<u64>,
    #[serde(default)]
    pub policy: OverloadPolicy,
    #[serde(default = "default_clock")]
    pub clock_hz: u64,
}

impl PlatformConfig {
    pub fn new(nodes: Vec<NodeSpec>, mapping: Mapping) -> Self {
        Self {
            nodes,
            mapping,
            cuts: Vec::new(),
            link_bandwidth_bps: None,
            policy: OverloadPolicy::Stall,
            clock_hz: DEFAULT_CLOCK_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("actor {0:?} is not mapped to any node")]
    UnmappedActor(String),
    #[error("mapping names unknown actor {0:?}")]
    UnknownActor(String),
    #[error("actor {actor:?} mapped to nonexistent node {node:?}")]
    UnknownNode { actor: String, node: String },
    #[error("fixed-function node {node:?} does not implement {behavior:?} (actor {actor:?})")]
    UnsupportedBehavior {
        actor: String,
        node: String,
        behavior: String,
    },
    #[error("cut {cut:?} names unknown node {name:?}")]
    BadCut { cut: String, name: String },
    #[error("link bandwidth and clock must be positive")]
    BadLink,
}

#[derive(Debug, Clone)]
struct NodeRt {
    id: String,
    on_chip: bool,
    capacity: Option<usize>,
}

/// An application placed on a platform.
#[derive(Debug, Clone)]
pub struct Deployment {
    nodes: Vec<NodeRt>,
    actor_node: Vec<usize>,
    actor_cost: Vec<u64>,
    offchip: Vec<bool>,
    cuts: Vec<(String, Vec<usize>)>,
    link_bandwidth_bps: Option<u64>,
    clock_hz: u64,
    policy: OverloadPolicy,
}

fn producer_on_chip(app: &Application, dep_nodes: &[NodeRt], actor_node: &[usize], r: NodeRef) -> bool {
    match r {
        NodeRef::Source(s) => matches!(app.graph().sources[s].kind, SourceKind::Generator { .. }),
        NodeRef::Actor(a) => dep_nodes[actor_node[a]].on_chip,
        NodeRef::Sink(_) => false,
    }
}

fn node_name(app: &Application, r: NodeRef) -> &str {
    let g = app.graph();
    match r {
        NodeRef::Source(i) => &g.sources[i].name,
        NodeRef::Actor(i) => &g.actors[i].name,
        NodeRef::Sink(i) => &g.sinks[i].name,
    }
}

/// Exact name, or a prefix followed by `*`.
fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

/// Places every actor of `app` on a node of `config`.
pub fn map_actors(app: &Application, config: &PlatformConfig) -> Result<Deployment, Vec<PlatformError>> {
    let mut errors = Vec::new();
    let g = app.graph();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, n) in config.nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), i).is_some() {
            errors.push(PlatformError::DuplicateNode(n.id.clone()));
        }
    }
    for name in config.mapping.keys() {
        if !g.actors.iter().any(|a| &a.name == name) {
            errors.push(PlatformError::UnknownActor(name.clone()));
        }
    }
    let mut actor_node = Vec::with_capacity(g.actors.len());
    let mut actor_cost = Vec::with_capacity(g.actors.len());
    for a in &g.actors {
        let Some(node_id) = config.mapping.get(&a.name) else {
            errors.push(PlatformError::UnmappedActor(a.name.clone()));
            actor_node.push(0);
            actor_cost.push(0);
            continue;
        };
        let Some(&n) = index.get(node_id.as_str()) else {
            errors.push(PlatformError::UnknownNode {
                actor: a.name.clone(),
                node: node_id.clone(),
            });
            actor_node.push(0);
            actor_cost.push(0);
            continue;
        };
        let spec = &config.nodes[n];
        if spec.kind == NodeKind::FixedFunction && !spec.supports.contains(&a.behavior) {
            errors.push(PlatformError::UnsupportedBehavior {
                actor: a.name.clone(),
                node: spec.id.clone(),
                behavior: a.behavior.clone(),
            });
        }
        let default_cost = match spec.location {
            Location::OnChip => DEFAULT_CYCLES_PER_FIRING,
            Location::Host => 0,
        };
        let cost = spec
            .behavior_cycles
            .get(&a.behavior)
            .copied()
            .or(spec.cycles_per_firing)
            .unwrap_or(default_cost);
        actor_node.push(n);
        actor_cost.push(cost as u64);
    }
    if config.link_bandwidth_bps == Some(0) || config.clock_hz == 0 {
        errors.push(PlatformError::BadLink);
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let nodes: Vec<NodeRt> = config
        .nodes
        .iter()
        .map(|n| NodeRt {
            id: n.id.clone(),
            on_chip: n.location == Location::OnChip,
            capacity: match n.location {
                Location::OnChip => Some(n.run_queue.unwrap_or(DEFAULT_RUN_QUEUE)),
                Location::Host => None,
            },
        })
        .collect();
    let topo = app.topology();
    let offchip: Vec<bool> = topo
        .channels
        .iter()
        .map(|c| {
            let to_host = match c.to.0 {
                NodeRef::Actor(a) => !nodes[actor_node[a]].on_chip,
                _ => true,
            };
            producer_on_chip(app, &nodes, &actor_node, c.from.0) && to_host
        })
        .collect();

    let mut cuts = vec![(
        OFFCHIP_CUT.to_string(),
        (0..offchip.len()).filter(|&c| offchip[c]).collect::<Vec<_>>(),
    )];
    let known = |pat: &str| {
        g.sources.iter().any(|s| pattern_matches(pat, &s.name))
            || g.actors.iter().any(|a| pattern_matches(pat, &a.name))
            || g.sinks.iter().any(|s| pattern_matches(pat, &s.name))
    };
    for cut in &config.cuts {
        for name in cut.producers.iter().chain(&cut.consumers) {
            if !known(name) {
                errors.push(PlatformError::BadCut {
                    cut: cut.name.clone(),
                    name: name.clone(),
                });
            }
        }
        let matches = |list: &[String], r: NodeRef| {
            list.iter().any(|p| pattern_matches(p, node_name(app, r)))
        };
        let chans = topo
            .channels
            .iter()
            .enumerate()
            .filter(|(_, c)| matches(&cut.producers, c.from.0) && matches(&cut.consumers, c.to.0))
            .map(|(i, _)| i)
            .collect();
        cuts.push((cut.name.clone(), chans));
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Deployment {
        nodes,
        actor_node,
        actor_cost,
        offchip,
        cuts,
        link_bandwidth_bps: config.link_bandwidth_bps,
        clock_hz: config.clock_hz,
        policy: config.policy,
    })
}

impl Deployment {
    /// Whether channel `c` crosses from the chip to the host.
    pub fn is_offchip(&self, c: usize) -> bool {
        self.offchip[c]
    }

    pub fn cut_names(&self) -> Vec<String> {
        self.cuts.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn node_of(&self, actor: usize) -> &str {
        &self.nodes[self.actor_node[actor]].id
    }

    pub fn policy(&self) -> OverloadPolicy {
        self.policy
    }

    pub fn with_policy(&self, policy: OverloadPolicy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }

    /// Same placement with unbounded run queues: the reference for overload
    /// comparisons.
    pub fn unbounded(&self) -> Self {
        let mut d = self.clone();
        for n in &mut d.nodes {
            n.capacity = None;
        }
        d
    }
}

/// Primary events per generator source, stamped with the cycle of the
/// record that raised them.
pub type TimedInputs = BTreeMap<String, Vec<(u32, Event)>>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub id: String,
    /// Events that reached the node's ingress.
    pub offered: u64,
    /// Events taken from the run queue.
    pub processed: u64,
    pub discarded: u64,
    pub firings: u64,
    pub busy_cycles: u64,
    pub max_queue: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecOutput {
    pub sinks: BTreeMap<String, Vec<SinkRecord>>,
    pub channel_events: Vec<u64>,
    pub channel_bytes: Vec<u64>,
    pub cuts: Vec<CutCounters>,
    pub nodes: Vec<NodeStats>,
    /// Cycles each generator source was held back.
    pub stall_cycles: BTreeMap<String, u64>,
    pub faults: Vec<u64>,
    pub unrouted: u64,
    pub no_progress: Vec<NoProgress>,
    /// Producers still waiting for queue space when the run ended.
    pub blocked: Vec<String>,
    pub end_time: u64,
    pub actor_diagnostics: BTreeMap<String, Vec<(String, u64)>>,
}

impl ExecOutput {
    pub fn cut(&self, name: &str) -> Option<&CutCounters> {
        self.cuts.iter().find(|c| c.name == name)
    }

    pub fn total_stall_cycles(&self) -> u64 {
        self.stall_cycles.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Producer {
    Source(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum What {
    Source(usize),
    Flush(usize),
    NodeDone(usize),
    Retry(Producer),
    Link(usize, u64),
}

#[derive(Debug, Default)]
struct NodeState {
    queue: VecDeque<(usize, Event)>,
    busy: bool,
    blocked: bool,
    pending: VecDeque<(usize, Event)>,
    waiters: VecDeque<Producer>,
    stats: NodeStats,
}

#[derive(Debug, Default)]
struct SourceState {
    cursor: usize,
    offset: u64,
    blocked_since: Option<u64>,
    stall: u64,
    /// Queued flush requests.
    flushes: VecDeque<Event>,
}

struct Exec<'a> {
    app: &'a mut Application,
    dep: &'a Deployment,
    inputs: Vec<&'a [(u32, Event)]>,
    ch: ChannelState,
    heap: BinaryHeap<Reverse<(u64, u64, What)>>,
    seq: u64,
    nodes: Vec<NodeState>,
    sources: Vec<SourceState>,
    link_free: u64,
    in_flight: BTreeMap<u64, (usize, Event)>,
    out: ExecOutput,
    last_ts: u32,
    now: u64,
}

impl<'a> Exec<'a> {
    fn schedule(&mut self, time: u64, what: What) {
        self.heap.push(Reverse((time, self.seq, what)));
        self.seq += 1;
    }

    fn meter(&mut self, c: usize, e: &Event) {
        self.out.channel_events[c] += 1;
        self.out.channel_bytes[c] += self.app.wire_size(e) as u64;
    }

    /// Hands `e` to channel `c`; `false` means the producer must wait.
    fn deliver(&mut self, c: usize, e: Event, from: Producer) -> bool {
        let to = self.app.topology().channels[c].to;
        if let NodeRef::Actor(a) = to.0 {
            let n = self.dep.actor_node[a];
            if from != Producer::Node(n) {
                let node = &mut self.nodes[n];
                let full = self.dep.nodes[n]
                    .capacity
                    .is_some_and(|cap| node.queue.len() >= cap);
                if full {
                    match self.dep.policy {
                        OverloadPolicy::Stall => {
                            if !node.waiters.contains(&from) {
                                node.waiters.push_back(from);
                            }
                            return false;
                        }
                        OverloadPolicy::Discard => {
                            node.stats.offered += 1;
                            node.stats.discarded += 1;
                            self.meter(c, &e);
                            return true;
                        }
                    }
                }
            }
        }
        self.meter(c, &e);
        if let (true, Some(bps)) = (self.dep.offchip[c], self.dep.link_bandwidth_bps) {
            let bits = self.app.wire_size(&e) as u128 * 8;
            let tx = (bits * self.dep.clock_hz as u128).div_ceil(bps as u128) as u64;
            let arrival = self.link_free.max(self.now) + tx;
            self.link_free = arrival;
            let id = self.seq;
            self.in_flight.insert(id, (c, e));
            self.schedule(arrival, What::Link(c, id));
            return true;
        }
        self.arrive(c, e, from);
        true
    }

    fn arrive(&mut self, c: usize, e: Event, from: Producer) {
        let (to, port) = self.app.topology().channels[c].to;
        match to {
            NodeRef::Sink(s) => {
                let name = self.app.graph().sinks[s].name.clone();
                self.out
                    .sinks
                    .get_mut(&name)
                    .expect("sink")
                    .push(SinkRecord { port, event: e });
            }
            NodeRef::Actor(a) => {
                let n = self.dep.actor_node[a];
                if from == Producer::Node(n) {
                    let size = self.app.wire_size(&e);
                    self.ch.push(c, e, size);
                } else {
                    let node = &mut self.nodes[n];
                    node.queue.push_back((c, e));
                    node.stats.offered += 1;
                    node.stats.max_queue = node.stats.max_queue.max(node.queue.len());
                    self.work(n);
                }
            }
            NodeRef::Source(_) => unreachable!("sources have no inputs"),
        }
    }

    fn work(&mut self, n: usize) {
        if self.nodes[n].busy || self.nodes[n].blocked {
            return;
        }
        loop {
            let ready = (0..self.dep.actor_node.len())
                .find(|&a| self.dep.actor_node[a] == n && self.app.ready(a, &self.ch));
            if let Some(a) = ready {
                let taken = self.app.take_inputs(a, &mut self.ch);
                self.nodes[n].stats.firings += 1;
                match self.app.fire(a, &taken) {
                    Ok(ports) => {
                        for (p, events) in ports.into_iter().enumerate() {
                            let c = self.app.topology().actor_outputs[a][p];
                            self.nodes[n].pending.extend(events.into_iter().map(|e| (c, e)));
                        }
                    }
                    Err(fault) => {
                        self.out.faults[a] += 1;
                        log::warn!("actor {}: {fault}", self.app.graph().actors[a].name);
                    }
                }
                let cost = self.dep.actor_cost[a];
                self.nodes[n].busy = true;
                self.nodes[n].stats.busy_cycles += cost;
                self.schedule(self.now + cost, What::NodeDone(n));
                return;
            }
            let Some((c, e)) = self.nodes[n].queue.pop_front() else {
                return;
            };
            self.nodes[n].stats.processed += 1;
            let size = self.app.wire_size(&e);
            self.ch.push(c, e, size);
            if let Some(p) = self.nodes[n].waiters.pop_front() {
                self.schedule(self.now, What::Retry(p));
            }
        }
    }

    fn flush_pending(&mut self, n: usize) {
        while let Some((c, e)) = self.nodes[n].pending.front().cloned() {
            if !self.deliver(c, e, Producer::Node(n)) {
                self.nodes[n].blocked = true;
                return;
            }
            self.nodes[n].pending.pop_front();
        }
        self.nodes[n].blocked = false;
        self.work(n);
    }

    fn unblock(&mut self, s: usize) {
        let st = &mut self.sources[s];
        if let Some(since) = st.blocked_since.take() {
            st.offset += self.now - since;
            st.stall += self.now - since;
        }
    }

    fn try_source(&mut self, s: usize) {
        if !self.sources[s].flushes.is_empty() {
            while let Some(e) = self.sources[s].flushes.front().cloned() {
                let c = self.app.topology().source_outputs[s][0];
                if !self.deliver(c, e, Producer::Source(s)) {
                    return;
                }
                self.sources[s].flushes.pop_front();
            }
            return;
        }
        let stream = self.inputs[s];
        let Some((_, e)) = stream.get(self.sources[s].cursor) else {
            return;
        };
        match self.app.route(s, e) {
            None => self.out.unrouted += 1,
            Some(c) => {
                if !self.deliver(c, e.clone(), Producer::Source(s)) {
                    self.sources[s].blocked_since.get_or_insert(self.now);
                    return;
                }
                if let Some(ts) = e.ts {
                    self.last_ts = self.last_ts.max(ts);
                }
            }
        }
        self.unblock(s);
        self.sources[s].cursor += 1;
        if let Some((cycle, _)) = stream.get(self.sources[s].cursor) {
            let at = (*cycle as u64 + self.sources[s].offset).max(self.now);
            self.schedule(at, What::Source(s));
        }
    }

    fn generators_done(&self) -> bool {
        (0..self.inputs.len()).all(|s| self.sources[s].cursor >= self.inputs[s].len())
    }

    fn run(&mut self) {
        let mut final_flush = false;
        loop {
            let Some(Reverse((time, _, what))) = self.heap.pop() else {
                if final_flush {
                    break;
                }
                final_flush = true;
                for s in 0..self.sources.len() {
                    if matches!(self.app.graph().sources[s].kind, SourceKind::Flush { .. }) {
                        let e = self.app.flush_event(s, self.last_ts);
                        self.sources[s].flushes.push_back(e);
                        self.try_source(s);
                    }
                }
                continue;
            };
            self.now = time;
            match what {
                What::Source(s) => self.try_source(s),
                What::Retry(Producer::Source(s)) => self.try_source(s),
                What::NodeDone(n) => {
                    self.nodes[n].busy = false;
                    self.flush_pending(n);
                }
                What::Retry(Producer::Node(n)) => {
                    if !self.nodes[n].busy {
                        self.flush_pending(n);
                    }
                }
                What::Flush(s) => {
                    if self.generators_done() {
                        continue;
                    }
                    let e = self.app.flush_event(s, self.now as u32);
                    self.sources[s].flushes.push_back(e);
                    self.try_source(s);
                    if let SourceKind::Flush { period: Some(p) } = self.app.graph().sources[s].kind {
                        self.schedule(self.now + p as u64, What::Flush(s));
                    }
                }
                What::Link(_, id) => {
                    let (c, e) = self.in_flight.remove(&id).expect("in flight");
                    let from = match self.app.topology().channels[c].from.0 {
                        NodeRef::Actor(a) => Producer::Node(self.dep.actor_node[a]),
                        NodeRef::Source(s) => Producer::Source(s),
                        NodeRef::Sink(_) => unreachable!(),
                    };
                    self.arrive(c, e, from);
                }
            }
        }
    }
}

/// Runs `app` on `dep` over `inputs` until everything has drained.
///
/// `app` must be freshly instantiated; behaviors keep their state.
pub fn execute(app: &mut Application, dep: &Deployment, inputs: &TimedInputs) -> ExecOutput {
    let topo = app.topology().clone();
    let g = app.graph().clone();
    let empty: &[(u32, Event)] = &[];
    let streams: Vec<&[(u32, Event)]> = g
        .sources
        .iter()
        .map(|s| match s.kind {
            SourceKind::Generator { .. } => inputs.get(&s.name).map_or(empty, |v| v.as_slice()),
            SourceKind::Flush { .. } => empty,
        })
        .collect();
    let n_channels = topo.channels.len();
    let mut out = ExecOutput {
        channel_events: vec![0; n_channels],
        channel_bytes: vec![0; n_channels],
        faults: vec![0; g.actors.len()],
        ..Default::default()
    };
    for s in &g.sinks {
        out.sinks.insert(s.name.clone(), Vec::new());
    }
    let mut exec = Exec {
        ch: ChannelState::new(&topo),
        app,
        dep,
        inputs: streams,
        heap: BinaryHeap::new(),
        seq: 0,
        nodes: dep
            .nodes
            .iter()
            .map(|n| NodeState {
                stats: NodeStats {
                    id: n.id.clone(),
                    ..Default::default()
                },
                ..Default::default()
            })
            .collect(),
        sources: (0..g.sources.len()).map(|_| SourceState::default()).collect(),
        link_free: 0,
        in_flight: BTreeMap::new(),
        out,
        last_ts: 0,
        now: 0,
    };
    for (s, spec) in g.sources.iter().enumerate() {
        match spec.kind {
            SourceKind::Generator { .. } => {
                if let Some((cycle, _)) = exec.inputs[s].first() {
                    exec.schedule(*cycle as u64, What::Source(s));
                }
            }
            SourceKind::Flush { period: Some(p) } if p > 0 => {
                exec.schedule(p as u64, What::Flush(s));
            }
            SourceKind::Flush { .. } => {}
        }
    }
    exec.run();

    let mut out = std::mem::take(&mut exec.out);
    out.end_time = exec.now;
    out.nodes = exec.nodes.iter().map(|n| n.stats.clone()).collect();
    for (s, spec) in g.sources.iter().enumerate() {
        if let SourceKind::Generator { .. } = spec.kind {
            out.stall_cycles.insert(spec.name.clone(), exec.sources[s].stall);
        }
    }
    for (n, node) in exec.nodes.iter().enumerate() {
        for w in &node.waiters {
            out.blocked.push(match *w {
                Producer::Source(s) => g.sources[s].name.clone(),
                Producer::Node(m) => dep.nodes[m].id.clone(),
            });
        }
        if !node.queue.is_empty() {
            log::warn!("node {} ended with {} queued events", dep.nodes[n].id, node.queue.len());
        }
    }
    out.no_progress = exec.app.no_progress(&exec.ch);
    for (a, spec) in g.actors.iter().enumerate() {
        out.actor_diagnostics
            .insert(spec.name.clone(), exec.app.diagnostics(a));
    }
    out.cuts = dep
        .cuts
        .iter()
        .map(|(name, chans)| CutCounters {
            name: name.clone(),
            events: chans.iter().map(|&c| out.channel_events[c]).sum(),
            bytes: chans.iter().map(|&c| out.channel_bytes[c]).sum(),
        })
        .collect();
    out
}

/// Upper bound for a conventional compressed trace: 2 bit per instruction
/// plus 16 bit per data access.
pub fn estimate_full_trace(n_instructions: u64, n_data_accesses: u64) -> u64 {
    2 * n_instructions + 16 * n_data_accesses
}

/// Primary events of every generator source in `graph`, produced by one
/// event generator per CPU armed with `triggers[cpu]`.
///
/// `streams[cpu]` is the trace of that CPU; missing streams are empty.
pub fn primary_events(
    graph: &ActorGraph,
    triggers: &BTreeMap<CpuId, Vec<TriggerCondition>>,
    streams: &[Vec<TraceRecord>],
    types: &EventTypeRegistry,
    config: &GeneratorConfig,
) -> Result<(TimedInputs, BTreeMap<CpuId, GeneratorStats>), ConfigError> {
    let mut inputs = TimedInputs::new();
    let mut stats = BTreeMap::new();
    for s in &graph.sources {
        let SourceKind::Generator { cpu } = s.kind else {
            continue;
        };
        let mut eg = EventGenerator::new(*config);
        for t in triggers.get(&cpu).into_iter().flatten() {
            eg.configure_trigger(types, t.clone())?;
        }
        let stream = streams.get(cpu as usize).map_or(&[][..], Vec::as_slice);
        inputs.insert(s.name.clone(), eg.run(stream));
        stats.insert(cpu, eg.stats());
    }
    Ok((inputs, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{behavior_registry, lock_profile_app};
    use crate::event_model::{EventTypeId, Value};
    use crate::workloads::{generate_workload, lock_bench};

    fn lock_setup(preset: &crate::apps::AppPreset) -> (Application, TimedInputs) {
        let types = EventTypeRegistry::builtin();
        let app = Application::new(&preset.graph, &types, &behavior_registry()).unwrap();
        let w = generate_workload(&lock_bench::small_preset()).unwrap();
        let (inputs, _) = primary_events(
            &preset.graph,
            &preset.triggers,
            &w.streams,
            &types,
            &GeneratorConfig::default(),
        )
        .unwrap();
        (app, inputs)
    }

    fn place(preset: &crate::apps::AppPreset, diff_node: &str, stat_node: &str) -> PlatformConfig {
        let mut mapping = Mapping::new();
        for a in &preset.graph.actors {
            let node = if a.name.starts_with("diff") { diff_node } else { stat_node };
            mapping.insert(a.name.clone(), node.into());
        }
        PlatformConfig::new(vec![NodeSpec::on_chip("dp"), NodeSpec::host("host")], mapping)
    }

    #[test]
    fn mapping_errors_are_collected() {
        let preset = lock_profile_app(&[0], None);
        let types = EventTypeRegistry::builtin();
        let app = Application::new(&preset.graph, &types, &behavior_registry()).unwrap();
        let mut cfg = place(&preset, "nowhere", "host");
        cfg.mapping.remove("stat");
        cfg.mapping.insert("ghost".into(), "host".into());
        cfg.nodes.push(NodeSpec::host("host"));
        let errs = map_actors(&app, &cfg).unwrap_err();
        assert!(errs.contains(&PlatformError::DuplicateNode("host".into())));
        assert!(errs.contains(&PlatformError::UnmappedActor("stat".into())));
        assert!(errs.contains(&PlatformError::UnknownActor("ghost".into())));
        assert!(errs.contains(&PlatformError::UnknownNode {
            actor: "diff0".into(),
            node: "nowhere".into()
        }));
    }

    #[test]
    fn fixed_function_support_checked() {
        let preset = lock_profile_app(&[0], None);
        let types = EventTypeRegistry::builtin();
        let app = Application::new(&preset.graph, &types, &behavior_registry()).unwrap();
        let mut cfg = place(&preset, "ff", "host");
        let mut ff = NodeSpec::on_chip("ff");
        ff.kind = NodeKind::FixedFunction;
        cfg.nodes.push(ff.clone());
        assert!(matches!(
            &map_actors(&app, &cfg).unwrap_err()[..],
            [PlatformError::UnsupportedBehavior { .. }]
        ));
        ff.supports = vec!["ta_diff".into()];
        cfg.nodes[2] = ff;
        assert!(map_actors(&app, &cfg).is_ok());
    }

    #[test]
    fn offchip_cut_follows_placement() {
        let preset = lock_profile_app(&[0, 1], None);
        let (mut app, inputs) = lock_setup(&preset);
        let dep = map_actors(&app, &place(&preset, "host", "host")).unwrap();
        let all_host = execute(&mut app, &dep, &inputs);
        let calls: u64 = inputs
            .values()
            .flatten()
            .filter(|(_, e)| e.type_id == EventTypeId::LOCK_CALL)
            .count() as u64;
        let rets = inputs.values().map(|v| v.len() as u64).sum::<u64>() - calls;
        let off = all_host.cut(OFFCHIP_CUT).unwrap();
        assert_eq!(off.events, calls + rets);
        assert_eq!(off.bytes, 14 * calls + 6 * rets);

        let (mut app, _) = lock_setup(&preset);
        let dep = map_actors(&app, &place(&preset, "dp", "host")).unwrap();
        let split = execute(&mut app, &dep, &inputs);
        let off = split.cut(OFFCHIP_CUT).unwrap();
        assert_eq!(off.events, calls);
        assert_eq!(off.bytes, 6 * calls);
        // same diagnosis result either way
        assert_eq!(all_host.sinks, split.sinks);
        assert!(split.no_progress.is_empty());
    }

    #[test]
    fn colocated_actors_bypass_the_run_queue() {
        let preset = lock_profile_app(&[0], None);
        let (mut app, inputs) = lock_setup(&preset);
        let dep = map_actors(&app, &place(&preset, "dp", "dp")).unwrap();
        let out = execute(&mut app, &dep, &inputs);
        let dp = &out.nodes[0];
        let primary = inputs["eg0"].len() as u64;
        // generator events and the flush pass the queue, ACQ_TIME does not
        assert_eq!(dp.offered, primary + 1);
        assert_eq!(out.cut(OFFCHIP_CUT).unwrap().events, 1);
        let rows = crate::apps::profile_rows(&out.sinks["profile"][0].event).unwrap();
        assert!(!rows.is_empty());
    }

    fn burst(n: u32, gap: u32) -> TimedInputs {
        let mut m = TimedInputs::new();
        let mut v = Vec::new();
        for i in 0..n {
            let t = i * gap;
            v.push((t, Event::new(EventTypeId::LOCK_CALL, Some(t), vec![Value::Int(7)])));
            v.push((t + 1, Event::new(EventTypeId::LOCK_RETURN, Some(t + 1), vec![])));
        }
        m.insert("eg0".into(), v);
        m
    }

    #[test]
    fn stall_matches_reference_under_overload() {
        let preset = lock_profile_app(&[0], None);
        let types = EventTypeRegistry::builtin();
        let fresh = || Application::new(&preset.graph, &types, &behavior_registry()).unwrap();
        let inputs = burst(200, 2);
        let dep = map_actors(&fresh(), &place(&preset, "dp", "host")).unwrap();
        let stalled = execute(&mut fresh(), &dep, &inputs);
        let reference = execute(&mut fresh(), &dep.unbounded(), &inputs);
        assert!(stalled.total_stall_cycles() > 0);
        assert_eq!(reference.total_stall_cycles(), 0);
        assert_eq!(stalled.sinks, reference.sinks);
        assert!(stalled.nodes[0].max_queue <= DEFAULT_RUN_QUEUE);
        assert!(stalled.blocked.is_empty());
    }

    #[test]
    fn discard_conserves_events() {
        let preset = lock_profile_app(&[0], None);
        let types = EventTypeRegistry::builtin();
        let mut app = Application::new(&preset.graph, &types, &behavior_registry()).unwrap();
        let inputs = burst(200, 2);
        let dep = map_actors(&app, &place(&preset, "dp", "host"))
            .unwrap()
            .with_policy(OverloadPolicy::Discard);
        let out = execute(&mut app, &dep, &inputs);
        let dp = &out.nodes[0];
        assert!(dp.discarded > 0);
        assert_eq!(dp.offered, 400);
        assert_eq!(dp.offered, dp.processed + dp.discarded);
        assert_eq!(out.total_stall_cycles(), 0);
    }

    #[test]
    fn link_cap_delays_but_preserves_results() {
        let preset = lock_profile_app(&[0], None);
        let types = EventTypeRegistry::builtin();
        let fresh = || Application::new(&preset.graph, &types, &behavior_registry()).unwrap();
        let inputs = burst(50, 1000);
        let cfg = place(&preset, "host", "host");
        let free = execute(&mut fresh(), &map_actors(&fresh(), &cfg).unwrap(), &inputs);
        let mut capped_cfg = cfg.clone();
        // 50 bit/s at a 50 cycles/s clock: one cycle per bit
        capped_cfg.link_bandwidth_bps = Some(50);
        capped_cfg.clock_hz = 50;
        let capped = execute(&mut fresh(), &map_actors(&fresh(), &capped_cfg).unwrap(), &inputs);
        assert_eq!(free.sinks, capped.sinks);
        // 50 * (14 + 6) bytes serialized back to back after the first send
        assert!(capped.end_time >= 50 * 20 * 8);
        assert!(capped.end_time > free.end_time);
    }

    #[test]
    fn named_cuts() {
        let preset = lock_profile_app(&[0], None);
        let (mut app, inputs) = lock_setup(&preset);
        let mut cfg = place(&preset, "dp", "host");
        cfg.cuts.push(CutSpec {
            name: "into_diff".into(),
            producers: vec!["*".into()],
            consumers: vec!["diff0".into()],
        });
        let dep = map_actors(&app, &cfg).unwrap();
        assert_eq!(dep.cut_names(), vec![OFFCHIP_CUT.to_string(), "into_diff".into()]);
        let out = execute(&mut app, &dep, &inputs);
        assert_eq!(out.cut("into_diff").unwrap().events, inputs["eg0"].len() as u64);

        cfg.cuts[0].consumers = vec!["nope".into()];
        assert!(map_actors(&app, &cfg).is_err());
    }

    #[test]
    fn full_trace_estimate() {
        assert_eq!(estimate_full_trace(1000, 10), 2160);
    }
}
