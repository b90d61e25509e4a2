// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! CPU event generator.
//!
//! One generator watches one CPU's instruction stream. It keeps a shadow of
//! the register file and of recent stack stores so that primary events can
//! carry function arguments, and a return-address stack to detect returns
//! from monitored functions.
//!
//! Per record the generator (1) folds the record into its shadows, (2) checks
//! the topmost return-address entry, (3) pushes an entry if the record is the
//! entry of a monitored function and (4) evaluates PC comparators. Events
//! raised by one record come out in ascending trigger-id order.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{Event, EventTypeId, EventTypeRegistry, FieldKind, Value};
use crate::workloads::{InstrKind, TraceRecord, REG_ARG0, REG_SP};

pub const DEFAULT_MAX_TRIGGERS: usize = 12;
pub const DEFAULT_RAS_DEPTH: usize = 32;
pub const DEFAULT_STACK_SHADOW_WORDS: usize = 16;
/// Arguments passed in registers r3..r8.
pub const REGISTER_ARGS: u8 = 6;

pub type TriggerId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerKind {
    PcMatch { pc: u32 },
    FunctionReturn { entry_pc: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureSpec {
    /// Register indices captured after the arguments, in ascending order.
    #[serde(default)]
    pub registers: Vec<u8>,
    /// Leading function arguments; 1-6 come from r3..r8, the rest from the
    /// stack shadow.
    #[serde(default)]
    pub arg_count: u8,
    #[serde(default)]
    pub include_timestamp: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerCondition {
    pub id: TriggerId,
    pub kind: TriggerKind,
    pub capture: CaptureSpec,
    pub emit_type: EventTypeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub max_triggers: usize,
    pub ras_depth: usize,
    pub stack_shadow_words: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            max_triggers: DEFAULT_MAX_TRIGGERS,
            ras_depth: DEFAULT_RAS_DEPTH,
            stack_shadow_words: DEFAULT_STACK_SHADOW_WORDS,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("trigger capacity of {capacity} exceeded")]
    TriggerCapacityExceeded { capacity: usize },
    #[error("duplicate trigger id {0}")]
    DuplicateTrigger(TriggerId),
    #[error("trigger {id}: {reason}")]
    InvalidCapture { id: TriggerId, reason: String },
    #[error("register index {0} out of range")]
    BadRegister(u8),
}

/// Diagnostic counters of one generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorStats {
    pub records: u64,
    pub events: u64,
    /// Entries dropped from the bottom of a full return-address stack.
    pub ras_overflows: u64,
    /// Requested stack arguments that were never observed; encoded as 0.
    pub stack_shadow_misses: u64,
}

#[derive(Debug, Clone)]
struct Armed {
    cond: TriggerCondition,
    /// Field kinds of `emit_type`, in capture order.
    kinds: Vec<FieldKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RasEntry {
    link: u32,
    triggers: Vec<TriggerId>,
}

#[derive(Debug, Clone)]
pub struct EventGenerator {
    config: GeneratorConfig,
    triggers: Vec<Armed>,
    regs: [u32; 32],
    /// `((sp, offset), value)`, oldest first.
    stack: VecDeque<((u32, i16), u32)>,
    ras: VecDeque<RasEntry>,
    stats: GeneratorStats,
}

impl Default for EventGenerator {
    fn default() -> Self {
        Self::new(GeneratorConfig::default())
    }
}

impl EventGenerator {
    pub fn new(config: GeneratorConfig) -> Self {
        Self {
            config,
            triggers: Vec::new(),
            regs: [0; 32],
            stack: VecDeque::new(),
            ras: VecDeque::new(),
            stats: GeneratorStats::default(),
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Arms `cond`, checking its capture against the schema of `emit_type`.
    pub fn configure_trigger(
        &mut self,
        registry: &EventTypeRegistry,
        cond: TriggerCondition,
    ) -> Result<TriggerId, ConfigError> {
        if self.triggers.iter().any(|t| t.cond.id == cond.id) {
            return Err(ConfigError::DuplicateTrigger(cond.id));
        }
        if self.triggers.len() >= self.config.max_triggers {
            return Err(ConfigError::TriggerCapacityExceeded {
                capacity: self.config.max_triggers,
            });
        }
        let invalid = |reason: String| ConfigError::InvalidCapture {
            id: cond.id,
            reason,
        };
        if let Some(&r) = cond.capture.registers.iter().find(|&&r| r >= 32) {
            return Err(ConfigError::BadRegister(r));
        }
        let max_args = REGISTER_ARGS as usize + self.config.stack_shadow_words;
        if cond.capture.arg_count as usize > max_args {
            return Err(invalid(format!(
                "{} arguments requested, at most {max_args} can be captured",
                cond.capture.arg_count
            )));
        }
        let schema = registry
            .schema(cond.emit_type)
            .map_err(|e| invalid(e.to_string()))?;
        if schema.timestamp != cond.capture.include_timestamp {
            return Err(invalid(format!(
                "timestamp capture disagrees with schema {}",
                schema.name
            )));
        }
        let wanted = cond.capture.arg_count as usize + cond.capture.registers.len();
        if schema.fields.len() != wanted {
            return Err(invalid(format!(
                "captures {wanted} values but {} has {} fields",
                schema.name,
                schema.fields.len()
            )));
        }
        if schema.fields.iter().any(|f| f.kind == FieldKind::Bytes) {
            return Err(invalid(format!("{} has a byte-string field", schema.name)));
        }
        let kinds = schema.fields.iter().map(|f| f.kind).collect();
        let mut cond = cond;
        cond.capture.registers.sort_unstable();
        let id = cond.id;
        self.triggers.push(Armed { cond, kinds });
        self.triggers.sort_by_key(|t| t.cond.id);
        Ok(id)
    }

    pub fn trigger_count(&self) -> usize {
        self.triggers.len()
    }

    pub fn stats(&self) -> GeneratorStats {
        self.stats
    }

    pub fn register_shadow(&self) -> &[u32; 32] {
        &self.regs
    }

    /// Stack word stored at `offset(sp)` while r1 held `sp`, if still shadowed.
    pub fn stack_word(&self, sp: u32, offset: i16) -> Option<u32> {
        self.stack
            .iter()
            .find(|(k, _)| *k == (sp, offset))
            .map(|(_, v)| *v)
    }

    /// Return addresses awaiting their return, bottom first.
    pub fn pending_returns(&self) -> Vec<u32> {
        self.ras.iter().map(|e| e.link).collect()
    }

    fn shadow(&mut self, rec: &TraceRecord) {
        if let Some(st) = rec.store {
            if st.base_reg == REG_SP && st.offset >= 0 {
                let key = (self.regs[REG_SP as usize], st.offset);
                if let Some(slot) = self.stack.iter_mut().find(|(k, _)| *k == key) {
                    slot.1 = st.value;
                } else {
                    if self.stack.len() >= self.config.stack_shadow_words {
                        self.stack.pop_front();
                    }
                    self.stack.push_back((key, st.value));
                }
            }
        }
        if let Some(wb) = rec.writeback {
            self.regs[(wb.reg & 31) as usize] = wb.value;
        }
    }

    /// Values for `spec` from the current shadows, truncated to `kinds`.
    pub fn capture_snapshot(&mut self, spec: &CaptureSpec, kinds: &[FieldKind]) -> Vec<Value> {
        let sp = self.regs[REG_SP as usize];
        let mut raw = Vec::with_capacity(kinds.len());
        for k in 1..=spec.arg_count {
            let v = if k <= REGISTER_ARGS {
                self.regs[(REG_ARG0 + k - 1) as usize]
            } else {
                let offset = 4 * (k - REGISTER_ARGS - 1) as i16;
                self.stack_word(sp, offset).unwrap_or_else(|| {
                    self.stats.stack_shadow_misses += 1;
                    0
                })
            };
            raw.push(v);
        }
        raw.extend(spec.registers.iter().map(|&r| self.regs[r as usize]));
        raw.iter()
            .zip(kinds)
            .map(|(&v, k)| Value::Int(k.truncate(v as u64)))
            .collect()
    }

    fn emit(&mut self, index: usize, cycle: u32) -> Event {
        let spec = self.triggers[index].cond.capture.clone();
        let kinds = self.triggers[index].kinds.clone();
        let payload = self.capture_snapshot(&spec, &kinds);
        let ts = spec.include_timestamp.then_some(cycle);
        Event::new(self.triggers[index].cond.emit_type, ts, payload)
    }

    fn index_of(&self, id: TriggerId) -> usize {
        self.triggers
            .binary_search_by_key(&id, |t| t.cond.id)
            .expect("armed trigger")
    }

    /// Consumes one record and returns the primary events it raises.
    pub fn step(&mut self, rec: &TraceRecord) -> Vec<Event> {
        self.stats.records += 1;
        self.shadow(rec);
        let mut fired: Vec<usize> = Vec::new();

        if let Some(top) = self.ras.pop_back_if(|top| top.link == rec.pc) {
            fired.extend(top.triggers.iter().map(|&id| self.index_of(id)));
        }

        let mut entered = false;
        if rec.kind == InstrKind::Call {
            let monitored: Vec<TriggerId> = self
                .triggers
                .iter()
                .filter(|t| t.cond.kind == TriggerKind::FunctionReturn { entry_pc: rec.pc })
                .map(|t| t.cond.id)
                .collect();
            if !monitored.is_empty() {
                entered = true;
                if self.ras.len() >= self.config.ras_depth {
                    self.ras.pop_front();
                    self.stats.ras_overflows += 1;
                }
                self.ras.push_back(RasEntry {
                    link: rec.link_address,
                    triggers: monitored,
                });
            }
        }

        for (i, t) in self.triggers.iter().enumerate() {
            if t.cond.kind == (TriggerKind::PcMatch { pc: rec.pc }) {
                fired.push(i);
                entered |= rec.kind == InstrKind::Call;
            }
        }

        fired.sort_unstable();
        let events: Vec<Event> = fired.into_iter().map(|i| self.emit(i, rec.cycle)).collect();
        if entered {
            // The callee owns a fresh frame from here on.
            self.stack.clear();
        }
        self.stats.events += events.len() as u64;
        events
    }

    /// Runs the generator over a whole stream, returning `(cycle, event)`.
    pub fn run(&mut self, stream: &[TraceRecord]) -> Vec<(u32, Event)> {
        let mut out = Vec::new();
        for rec in stream {
            out.extend(self.step(rec).into_iter().map(|e| (rec.cycle, e)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{EventSchema, FieldSpec};
    use crate::workloads::{StoreWord, Writeback};

    fn registry() -> EventTypeRegistry {
        let mut reg = EventTypeRegistry::builtin();
        reg.register(
            EventTypeId(0x100),
            EventSchema::new("EV_TS", true, vec![]),
        )
        .unwrap();
        reg.register(
            EventTypeId(0x101),
            EventSchema::new(
                "EV_ARG7",
                false,
                vec![
                    FieldSpec::new("a1", FieldKind::U32),
                    FieldSpec::new("a2", FieldKind::U32),
                    FieldSpec::new("a3", FieldKind::U32),
                    FieldSpec::new("a4", FieldKind::U32),
                    FieldSpec::new("a5", FieldKind::U32),
                    FieldSpec::new("a6", FieldKind::U32),
                    FieldSpec::new("a7", FieldKind::U32),
                ],
            ),
        )
        .unwrap();
        reg
    }

    fn pc_trigger(id: TriggerId, pc: u32) -> TriggerCondition {
        TriggerCondition {
            id,
            kind: TriggerKind::PcMatch { pc },
            capture: CaptureSpec {
                include_timestamp: true,
                ..Default::default()
            },
            emit_type: EventTypeId(0x100),
        }
    }

    fn ret_trigger(id: TriggerId, entry_pc: u32) -> TriggerCondition {
        TriggerCondition {
            kind: TriggerKind::FunctionReturn { entry_pc },
            ..pc_trigger(id, 0)
        }
    }

    fn call(cycle: u32, pc: u32, link: u32) -> TraceRecord {
        TraceRecord {
            kind: InstrKind::Call,
            link_address: link,
            ..TraceRecord::plain(0, cycle, pc)
        }
    }

    #[test]
    fn capacity_is_exact() {
        let reg = registry();
        let mut g = EventGenerator::default();
        for i in 0..12 {
            g.configure_trigger(&reg, pc_trigger(i, i as u32 * 4)).unwrap();
        }
        assert_eq!(
            g.configure_trigger(&reg, pc_trigger(12, 0x100)),
            Err(ConfigError::TriggerCapacityExceeded { capacity: 12 })
        );
    }

    #[test]
    fn duplicate_ids_rejected() {
        let reg = registry();
        let mut g = EventGenerator::default();
        g.configure_trigger(&reg, pc_trigger(1, 0)).unwrap();
        assert_eq!(
            g.configure_trigger(&reg, pc_trigger(1, 4)),
            Err(ConfigError::DuplicateTrigger(1))
        );
    }

    #[test]
    fn capture_must_fit_schema() {
        let reg = registry();
        let mut g = EventGenerator::default();
        let mut t = pc_trigger(1, 0);
        t.capture.arg_count = 1;
        assert!(matches!(
            g.configure_trigger(&reg, t),
            Err(ConfigError::InvalidCapture { .. })
        ));
        let mut t = pc_trigger(2, 0);
        t.capture.include_timestamp = false;
        assert!(g.configure_trigger(&reg, t).is_err());
        let mut t = pc_trigger(3, 0);
        t.capture.registers = vec![40];
        assert_eq!(g.configure_trigger(&reg, t), Err(ConfigError::BadRegister(40)));
    }

    #[test]
    fn pc_zero_matches() {
        let reg = registry();
        let mut g = EventGenerator::default();
        g.configure_trigger(&reg, pc_trigger(0, 0)).unwrap();
        let ev = g.step(&TraceRecord::plain(0, 77, 0));
        assert_eq!(ev, vec![Event::new(EventTypeId(0x100), Some(77), vec![])]);
    }

    #[test]
    fn first_argument_from_r3() {
        let reg = EventTypeRegistry::builtin();
        let mut g = EventGenerator::default();
        g.configure_trigger(
            &reg,
            TriggerCondition {
                id: 0,
                kind: TriggerKind::PcMatch { pc: 0x1000 },
                capture: CaptureSpec {
                    registers: vec![],
                    arg_count: 1,
                    include_timestamp: true,
                },
                emit_type: EventTypeId::GET_BALANCE_CALL,
            },
        )
        .unwrap();
        let mut wb = TraceRecord::plain(0, 5, 0x500);
        wb.writeback = Some(Writeback { reg: 3, value: 2 });
        assert!(g.step(&wb).is_empty());
        let ev = g.step(&call(9, 0x1000, 0x508));
        assert_eq!(ev[0].payload, vec![Value::Int(2)]);
        assert_eq!(ev[0].ts, Some(9));
    }

    #[test]
    fn seventh_argument_from_stack() {
        let reg = registry();
        let mut g = EventGenerator::default();
        g.configure_trigger(
            &reg,
            TriggerCondition {
                id: 0,
                kind: TriggerKind::PcMatch { pc: 0x1000 },
                capture: CaptureSpec {
                    registers: vec![],
                    arg_count: 7,
                    include_timestamp: false,
                },
                emit_type: EventTypeId(0x101),
            },
        )
        .unwrap();
        let mut sp = TraceRecord::plain(0, 0, 0x500);
        sp.writeback = Some(Writeback { reg: 1, value: 0x8000 });
        g.step(&sp);
        let mut st = TraceRecord::plain(0, 1, 0x504);
        st.kind = InstrKind::StoreWord;
        st.store = Some(StoreWord { base_reg: 1, offset: 0, value: 42 });
        g.step(&st);
        let ev = g.step(&call(2, 0x1000, 0x510));
        assert_eq!(ev[0].payload[6], Value::Int(42));
        assert_eq!(g.stats().stack_shadow_misses, 0);
        // stack shadow is reset once the callee is entered
        let ev = g.step(&call(3, 0x1000, 0x510));
        assert_eq!(ev[0].payload[6], Value::Int(0));
        assert_eq!(g.stats().stack_shadow_misses, 1);
    }

    #[test]
    fn negative_offsets_ignored() {
        let mut g = EventGenerator::default();
        let mut st = TraceRecord::plain(0, 1, 0x504);
        st.store = Some(StoreWord { base_reg: 1, offset: -4, value: 1 });
        g.step(&st);
        assert_eq!(g.stack_word(0, -4), None);
    }

    #[test]
    fn return_of_monitored_function() {
        let reg = registry();
        let mut g = EventGenerator::default();
        g.configure_trigger(&reg, ret_trigger(0, 0x1000)).unwrap();
        assert!(g.step(&call(1, 0x1000, 0x2004)).is_empty());
        assert_eq!(g.pending_returns(), vec![0x2004]);
        assert!(g.step(&TraceRecord::plain(0, 2, 0x1004)).is_empty());
        let ev = g.step(&TraceRecord::plain(0, 3, 0x2004));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].ts, Some(3));
        assert!(g.pending_returns().is_empty());
    }

    #[test]
    fn only_topmost_entry_compared() {
        let reg = registry();
        let mut g = EventGenerator::default();
        g.configure_trigger(&reg, ret_trigger(0, 0x1000)).unwrap();
        g.step(&call(1, 0x1000, 0x2004));
        g.step(&call(2, 0x1000, 0x3008));
        assert!(g.step(&TraceRecord::plain(0, 3, 0x2004)).is_empty());
        assert_eq!(g.step(&TraceRecord::plain(0, 4, 0x3008)).len(), 1);
        assert_eq!(g.step(&TraceRecord::plain(0, 5, 0x2004)).len(), 1);
    }

    #[test]
    fn overflow_drops_oldest() {
        let reg = registry();
        let mut g = EventGenerator::new(GeneratorConfig {
            ras_depth: 2,
            ..Default::default()
        });
        g.configure_trigger(&reg, ret_trigger(0, 0x1000)).unwrap();
        for (i, link) in [0x10, 0x20, 0x30].into_iter().enumerate() {
            g.step(&call(i as u32, 0x1000, link));
        }
        assert_eq!(g.stats().ras_overflows, 1);
        assert_eq!(g.pending_returns(), vec![0x20, 0x30]);
    }

    #[test]
    fn simultaneous_triggers_in_id_order() {
        let reg = registry();
        let mut g = EventGenerator::default();
        g.configure_trigger(&reg, pc_trigger(5, 0x2004)).unwrap();
        g.configure_trigger(&reg, ret_trigger(2, 0x1000)).unwrap();
        g.configure_trigger(&reg, pc_trigger(9, 0x1000)).unwrap();
        assert_eq!(g.step(&call(0, 0x1000, 0x2004)).len(), 1);
        let ev = g.run(&[TraceRecord::plain(0, 1, 0x2004)]);
        assert_eq!(ev.len(), 2);
        assert_eq!(g.stats().events, 3);
    }

    #[test]
    fn captured_values_truncate_to_field_width() {
        let reg = EventTypeRegistry::builtin();
        let mut g = EventGenerator::default();
        g.configure_trigger(
            &reg,
            TriggerCondition {
                id: 0,
                kind: TriggerKind::PcMatch { pc: 0x40 },
                capture: CaptureSpec {
                    registers: vec![],
                    arg_count: 2,
                    include_timestamp: true,
                },
                emit_type: EventTypeId::MSG_SEND,
            },
        )
        .unwrap();
        let mut wb = TraceRecord::plain(0, 0, 0);
        wb.writeback = Some(Writeback { reg: 3, value: 0x1_0005 });
        g.step(&wb);
        let ev = g.step(&TraceRecord::plain(0, 1, 0x40));
        assert_eq!(ev[0].payload, vec![Value::Int(5), Value::Int(0)]);
    }
}
