// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Dataflow model of diagnosis applications.
//!
//! An application is a graph of sources (event generators and flush timers),
//! transformation actors and sinks, connected point to point by FIFO
//! channels. Endpoints are written `"node.port"`.

mod behavior;
mod schedule;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{EventTypeId, EventTypeRegistry};

pub use behavior::{
    Arity, Behavior, BehaviorFault, BehaviorInfo, BehaviorRegistry, Count, Factory, Outputs,
    Passthrough,
};
pub use schedule::{
    run_schedule, Application, ChannelState, NoProgress, RunOutput, RunStats, Scheduler, SinkRecord,
    SourceInputs,
};

/// Free-form behavior parameters.
pub type Params = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiringRule {
    /// One event from every input, read in port order.
    AllOneEach,
    /// `counts[i]` events from input `i`.
    Counts(Vec<usize>),
    /// Whichever input holds the oldest event; a nondeterministic merge.
    AnyInput,
}

impl FiringRule {
    pub fn is_fixed_order(&self) -> bool {
        !matches!(self, FiringRule::AnyInput)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePort {
    pub port: String,
    /// Event types routed to this port.
    pub types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    /// Primary events of the generator watching `cpu`, routed to ports by type.
    Generator { cpu: u8 },
    /// Emits its single output type at the end of a run and, if `period` is
    /// set, every `period` cycles.
    Flush {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: SourceKind,
    pub outputs: Vec<SourcePort>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub name: String,
    pub behavior: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Params,
    /// Overrides the behavior's default rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<FiringRule>,
    /// Overrides the behavior's purity flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pure: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkSpec {
    pub name: String,
    /// Presentation hint for the front end (`event_log`, `profile_table`, ...).
    pub kind: String,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub from: String,
    pub to: String,
    /// `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorGraph {
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub sinks: Vec<SinkSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node name {0:?}")]
    DuplicateName(String),
    #[error("endpoint {0:?} is not of the form node.port")]
    MalformedEndpoint(String),
    #[error("endpoint {0:?} names no {1} port")]
    DanglingEndpoint(String, &'static str),
    #[error("output {0:?} feeds more than one channel")]
    MultipleConsumers(String),
    #[error("input {0:?} is fed by more than one channel")]
    MultipleProducers(String),
    #[error("input {0:?} is not connected")]
    UnconnectedInput(String),
    #[error("output {0:?} is not connected")]
    UnconnectedOutput(String),
    #[error("actor {actor:?}: behavior takes {expected} {what}, {found} declared")]
    ArityMismatch {
        actor: String,
        what: &'static str,
        expected: Arity,
        found: usize,
    },
    #[error("actor {actor:?}: {reason}")]
    BadRule { actor: String, reason: String },
    #[error("actor {actor:?}: unknown behavior {behavior:?}")]
    UnknownBehavior { actor: String, behavior: String },
    #[error("{node:?}: unknown event type {name:?}")]
    UnknownEventType { node: String, name: String },
    #[error("{node:?}: event type {name:?} routed to more than one port")]
    AmbiguousRoute { node: String, name: String },
    #[error("source {0:?}: a flush source has exactly one output of one type")]
    BadFlushSource(String),
    #[error("actor {actor:?}: {reason}")]
    BehaviorConfig { actor: String, reason: String },
    #[error("channel capacity must be positive ({0:?})")]
    ZeroCapacity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Source(usize),
    Actor(usize),
    Sink(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedChannel {
    pub from: (NodeRef, usize),
    pub to: (NodeRef, usize),
    pub capacity: Option<usize>,
    pub name: String,
}

/// Index-resolved form of a valid graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub channels: Vec<ResolvedChannel>,
    /// Channel index per port.
    pub source_outputs: Vec<Vec<usize>>,
    pub actor_inputs: Vec<Vec<usize>>,
    pub actor_outputs: Vec<Vec<usize>>,
    pub sink_inputs: Vec<Vec<usize>>,
    /// Event types per source output port.
    pub source_types: Vec<Vec<Vec<EventTypeId>>>,
    pub rules: Vec<FiringRule>,
    pub pure: Vec<bool>,
}

fn split_endpoint(s: &str) -> Option<(&str, &str)> {
    let (node, port) = s.split_once('.')?;
    (!node.is_empty() && !port.is_empty()).then_some((node, port))
}

/// Checks `g` and resolves it; every problem found is reported.
pub fn validate_graph(
    g: &ActorGraph,
    types: &EventTypeRegistry,
    behaviors: &BehaviorRegistry,
) -> Result<Topology, Vec<GraphError>> {
    let mut errors = Vec::new();
    let mut names: HashMap<&str, NodeRef> = HashMap::new();
    let nodes = g
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name.as_str(), NodeRef::Source(i)))
        .chain(
            g.actors
                .iter()
                .enumerate()
                .map(|(i, a)| (a.name.as_str(), NodeRef::Actor(i))),
        )
        .chain(
            g.sinks
                .iter()
                .enumerate()
                .map(|(i, s)| (s.name.as_str(), NodeRef::Sink(i))),
        );
    for (name, r) in nodes {
        if names.insert(name, r).is_some() {
            errors.push(GraphError::DuplicateName(name.to_string()));
        }
    }

    let mut source_types = Vec::with_capacity(g.sources.len());
    for s in &g.sources {
        if matches!(s.kind, SourceKind::Flush { .. })
            && (s.outputs.len() != 1 || s.outputs[0].types.len() != 1)
        {
            errors.push(GraphError::BadFlushSource(s.name.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut tys = Vec::new();
        for p in &s.outputs {
            let mut port = Vec::new();
            for name in &p.types {
                match types.resolve(name) {
                    Ok(t) if !seen.insert(t) => {
                        errors.push(GraphError::AmbiguousRoute {
                            node: s.name.clone(),
                            name: name.clone(),
                        });
                    }
                    Ok(t) => port.push(t),
                    Err(_) => errors.push(GraphError::UnknownEventType {
                        node: s.name.clone(),
                        name: name.clone(),
                    }),
                }
            }
            tys.push(port);
        }
        source_types.push(tys);
    }

    let mut rules = Vec::with_capacity(g.actors.len());
    let mut pure = Vec::with_capacity(g.actors.len());
    for a in &g.actors {
        let Some(info) = behaviors.info(&a.behavior) else {
            errors.push(GraphError::UnknownBehavior {
                actor: a.name.clone(),
                behavior: a.behavior.clone(),
            });
            rules.push(a.rule.clone().unwrap_or(FiringRule::AllOneEach));
            pure.push(a.pure.unwrap_or(false));
            continue;
        };
        for (what, expected, found) in [
            ("inputs", info.inputs, a.inputs.len()),
            ("outputs", info.outputs, a.outputs.len()),
        ] {
            if !expected.admits(found) {
                errors.push(GraphError::ArityMismatch {
                    actor: a.name.clone(),
                    what,
                    expected,
                    found,
                });
            }
        }
        if let Err(reason) = behaviors.build(&a.behavior, &a.params, types) {
            errors.push(GraphError::BehaviorConfig {
                actor: a.name.clone(),
                reason,
            });
        }
        let rule = a.rule.clone().unwrap_or_else(|| info.default_rule.clone());
        let bad_rule = match &rule {
            FiringRule::Counts(c) if c.len() != a.inputs.len() => {
                Some(format!("{} counts for {} inputs", c.len(), a.inputs.len()))
            }
            FiringRule::Counts(c) if c.iter().all(|&n| n == 0) => {
                Some("a firing must consume at least one event".to_string())
            }
            _ if a.inputs.is_empty() => Some("an actor needs at least one input".to_string()),
            _ => None,
        };
        if let Some(reason) = bad_rule {
            errors.push(GraphError::BadRule {
                actor: a.name.clone(),
                reason,
            });
        }
        rules.push(rule);
        pure.push(a.pure.unwrap_or(info.pure));
    }

    let port_index = |node: NodeRef, port: &str, output: bool| -> Option<usize> {
        let list: &[String] = match (node, output) {
            (NodeRef::Actor(i), true) => &g.actors[i].outputs,
            (NodeRef::Actor(i), false) => &g.actors[i].inputs,
            (NodeRef::Sink(i), false) => &g.sinks[i].inputs,
            (NodeRef::Source(i), true) => {
                return g.sources[i].outputs.iter().position(|p| p.port == port)
            }
            _ => return None,
        };
        list.iter().position(|p| p == port)
    };

    let mut channels = Vec::with_capacity(g.channels.len());
    let mut producers: BTreeSet<(NodeRef, usize)> = BTreeSet::new();
    let mut consumers: BTreeSet<(NodeRef, usize)> = BTreeSet::new();
    for c in &g.channels {
        let mut resolve = |ep: &str, output: bool| -> Option<(NodeRef, usize)> {
            let Some((node, port)) = split_endpoint(ep) else {
                errors.push(GraphError::MalformedEndpoint(ep.to_string()));
                return None;
            };
            let found = names
                .get(node)
                .and_then(|&n| port_index(n, port, output).map(|p| (n, p)));
            if found.is_none() {
                let dir = if output { "output" } else { "input" };
                errors.push(GraphError::DanglingEndpoint(ep.to_string(), dir));
            }
            found
        };
        let from = resolve(&c.from, true);
        let to = resolve(&c.to, false);
        if c.capacity == Some(0) {
            errors.push(GraphError::ZeroCapacity(format!("{} -> {}", c.from, c.to)));
        }
        if let Some(f) = from {
            if !producers.insert(f) {
                errors.push(GraphError::MultipleConsumers(c.from.clone()));
            }
        }
        if let Some(t) = to {
            if !consumers.insert(t) {
                errors.push(GraphError::MultipleProducers(c.to.clone()));
            }
        }
        if let (Some(from), Some(to)) = (from, to) {
            channels.push(ResolvedChannel {
                from,
                to,
                capacity: c.capacity,
                name: format!("{} -> {}", c.from, c.to),
            });
        }
    }

    let mut lookup = |n: NodeRef, ports: &[String], output: bool| -> Vec<usize> {
        let node_name = match n {
            NodeRef::Source(i) => &g.sources[i].name,
            NodeRef::Actor(i) => &g.actors[i].name,
            NodeRef::Sink(i) => &g.sinks[i].name,
        };
        ports
            .iter()
            .enumerate()
            .map(|(p, pname)| {
                let hit = channels.iter().position(|c| {
                    let end = if output { c.from } else { c.to };
                    end == (n, p)
                });
                hit.unwrap_or_else(|| {
                    let ep = format!("{node_name}.{pname}");
                    errors.push(if output {
                        GraphError::UnconnectedOutput(ep)
                    } else {
                        GraphError::UnconnectedInput(ep)
                    });
                    usize::MAX
                })
            })
            .collect()
    };
    let source_outputs: Vec<Vec<usize>> = g
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ports: Vec<String> = s.outputs.iter().map(|p| p.port.clone()).collect();
            lookup(NodeRef::Source(i), &ports, true)
        })
        .collect();
    let actor_inputs: Vec<Vec<usize>> = g
        .actors
        .iter()
        .enumerate()
        .map(|(i, a)| lookup(NodeRef::Actor(i), &a.inputs, false))
        .collect();
    let actor_outputs: Vec<Vec<usize>> = g
        .actors
        .iter()
        .enumerate()
        .map(|(i, a)| lookup(NodeRef::Actor(i), &a.outputs, true))
        .collect();
    let sink_inputs: Vec<Vec<usize>> = g
        .sinks
        .iter()
        .enumerate()
        .map(|(i, s)| lookup(NodeRef::Sink(i), &s.inputs, false))
        .collect();

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Topology {
        channels,
        source_outputs,
        actor_inputs,
        actor_outputs,
        sink_inputs,
        source_types,
        rules,
        pure,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NondeterminismCause {
    /// The firing rule tests inputs for availability instead of blocking on
    /// a fixed order.
    AnyInputMerge,
    /// A sink interleaves several channels in arrival order.
    SinkMerge,
    /// The behavior is not flagged pure.
    Impure,
}

impl fmt::Display for NondeterminismCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NondeterminismCause::AnyInputMerge => "any-input merge",
            NondeterminismCause::SinkMerge => "sink merges several channels",
            NondeterminismCause::Impure => "impure behavior",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NondeterminismReason {
    pub node: String,
    pub cause: NondeterminismCause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Determinism {
    Deterministic,
    Nondeterministic(Vec<NondeterminismReason>),
}

impl Determinism {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Determinism::Deterministic)
    }
}

/// Static determinism check of a validated graph: blocking fixed-order
/// reads, point-to-point channels and pure behaviors.
pub fn classify_determinism(g: &ActorGraph, topo: &Topology) -> Determinism {
    let mut reasons = Vec::new();
    for (i, a) in g.actors.iter().enumerate() {
        if !topo.rules[i].is_fixed_order() {
            reasons.push(NondeterminismReason {
                node: a.name.clone(),
                cause: NondeterminismCause::AnyInputMerge,
            });
        }
        if !topo.pure[i] {
            reasons.push(NondeterminismReason {
                node: a.name.clone(),
                cause: NondeterminismCause::Impure,
            });
        }
    }
    for s in &g.sinks {
        if s.inputs.len() > 1 {
            reasons.push(NondeterminismReason {
                node: s.name.clone(),
                cause: NondeterminismCause::SinkMerge,
            });
        }
    }
    if reasons.is_empty() {
        Determinism::Deterministic
    } else {
        Determinism::Nondeterministic(reasons)
    }
}
