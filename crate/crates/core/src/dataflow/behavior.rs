// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Actor behaviors and the name-indexed registry that builds them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::{FiringRule, Params};
use crate::event_model::{Event, EventTypeId, EventTypeRegistry};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("behavior fault: {0}")]
pub struct BehaviorFault(pub String);

/// Output buffers of one firing, one per output port.
#[derive(Debug, Default)]
pub struct Outputs {
    ports: Vec<Vec<Event>>,
}

impl Outputs {
    pub fn new(n: usize) -> Self {
        Self {
            ports: vec![Vec::new(); n],
        }
    }

    pub fn push(&mut self, port: usize, event: Event) -> Result<(), BehaviorFault> {
        self.ports
            .get_mut(port)
            .ok_or_else(|| BehaviorFault(format!("no output port {port}")))?
            .push(event);
        Ok(())
    }

    pub fn port_count(&self) -> usize {
        self.ports.len()
    }

    pub fn into_ports(self) -> Vec<Vec<Event>> {
        self.ports
    }
}

/// Transformation function of an actor.
///
/// `inputs[i]` holds the events consumed from input port `i` by this firing,
/// oldest first. A behavior sees nothing beyond its inputs and its own state.
pub trait Behavior: Send {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault>;

    /// Named counters for run reports.
    fn diagnostics(&self) -> Vec<(String, u64)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn admits(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorInfo {
    pub inputs: Arity,
    pub outputs: Arity,
    pub default_rule: FiringRule,
    pub pure: bool,
    /// Event type written to each output port, when fixed.
    pub output_types: Vec<EventTypeId>,
}

pub type Factory = Arc<
    dyn Fn(&Params, &EventTypeRegistry) -> Result<Box<dyn Behavior>, String> + Send + Sync,
>;

#[derive(Clone)]
struct Entry {
    info: BehaviorInfo,
    factory: Factory,
}

/// Behavior constructors by name.
#[derive(Clone, Default)]
pub struct BehaviorRegistry {
    entries: BTreeMap<String, Entry>,
}

impl fmt::Debug for BehaviorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl BehaviorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with `passthrough` and `count`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(
            "passthrough",
            BehaviorInfo {
                inputs: Arity::Exactly(1),
                outputs: Arity::Exactly(1),
                default_rule: FiringRule::AllOneEach,
                pure: true,
                output_types: vec![],
            },
            |_, _| Ok(Box::new(Passthrough)),
        );
        r.register(
            "count",
            BehaviorInfo {
                inputs: Arity::Exactly(1),
                outputs: Arity::Exactly(1),
                default_rule: FiringRule::AllOneEach,
                pure: true,
                output_types: vec![],
            },
            |p, _| {
                let threshold = match p.get("threshold") {
                    None => 1,
                    Some(v) => v
                        .as_u64()
                        .filter(|&t| t > 0)
                        .ok_or("count: threshold must be a positive integer")?,
                };
                Ok(Box::new(Count::new(threshold)))
            },
        );
        r
    }

    pub fn register<F>(&mut self, name: &str, info: BehaviorInfo, factory: F)
    where
        F: Fn(&Params, &EventTypeRegistry) -> Result<Box<dyn Behavior>, String>
            + Send
            + Sync
            + 'static,
    {
        self.entries.insert(
            name.to_string(),
            Entry {
                info,
                factory: Arc::new(factory),
            },
        );
    }

    pub fn info(&self, name: &str) -> Option<&BehaviorInfo> {
        self.entries.get(name).map(|e| &e.info)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        name: &str,
        params: &Params,
        types: &EventTypeRegistry,
    ) -> Result<Box<dyn Behavior>, String> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| format!("unknown behavior {name:?}"))?;
        (e.factory)(params, types)
    }
}

/// Forwards every input event unchanged.
#[derive(Debug, Default)]
pub struct Passthrough;

impl Behavior for Passthrough {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault> {
        for e in inputs.iter().flatten() {
            out.push(0, e.clone())?;
        }
        Ok(())
    }
}

/// Counts its inputs and forwards every `threshold`-th one.
#[derive(Debug)]
pub struct Count {
    threshold: u64,
    seen: u64,
}

impl Count {
    pub fn new(threshold: u64) -> Self {
        Self { threshold, seen: 0 }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }
}

impl Behavior for Count {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault> {
        for e in inputs.iter().flatten() {
            self.seen += 1;
            if self.seen.is_multiple_of(self.threshold) {
                out.push(0, e.clone())?;
            }
        }
        Ok(())
    }

    fn diagnostics(&self) -> Vec<(String, u64)> {
        vec![("seen".into(), self.seen)]
    }
}
