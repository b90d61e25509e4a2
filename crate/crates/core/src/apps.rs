// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Built-in diagnosis applications and sinks.
//!
//! * `ta_check_balance_trans` flags get/set transactions on the bank balance
//!   that overlap with another owner's open transaction.
//! * `ta_diff` turns lock call/return pairs into acquisition times.
//! * `ta_stat` folds acquisition times into a per-lock profile.
//!
//! The preset constructors at the bottom wire these into complete
//! applications together with the event-generator triggers that feed them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataflow::{
    ActorGraph, ActorSpec, Arity, Behavior, BehaviorFault, BehaviorInfo, BehaviorRegistry,
    ChannelSpec, FiringRule, Outputs, Params, SinkSpec, SourceKind, SourcePort, SourceSpec,
};
use crate::event_gen::{CaptureSpec, TriggerCondition, TriggerKind};
use crate::event_model::{Event, EventTypeId, EventTypeRegistry, Value};
use crate::workloads::{bank_atm, lock_bench, CpuId};

/// FNV-1a (64 bit) over the little-endian bytes of `mutex`, XOR-folded to 16 bits.
pub fn hash16(mutex: u64) -> u16 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in mutex.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h ^ (h >> 16) ^ (h >> 32) ^ (h >> 48)) as u16
}

fn expect_type(e: &Event, ty: EventTypeId) -> Result<(), BehaviorFault> {
    if e.type_id == ty {
        Ok(())
    } else {
        Err(BehaviorFault(format!(
            "expected type {:#06x}, got {:#06x}",
            ty.0, e.type_id.0
        )))
    }
}

fn ts_of(e: &Event) -> Result<u32, BehaviorFault> {
    e.ts.ok_or_else(|| BehaviorFault("event carries no timestamp".into()))
}

fn int_field(e: &Event, i: usize) -> Result<u64, BehaviorFault> {
    e.int(i)
        .ok_or_else(|| BehaviorFault(format!("missing integer field {i}")))
}

/// Lock acquisition time from a call/return pair of one CPU.
#[derive(Debug, Default)]
pub struct TaDiff {
    saturated: u64,
}

impl TaDiff {
    pub fn saturated(&self) -> u64 {
        self.saturated
    }

    pub fn diff(&mut self, call: &Event, ret: &Event) -> Result<Event, BehaviorFault> {
        expect_type(call, EventTypeId::LOCK_CALL)?;
        expect_type(ret, EventTypeId::LOCK_RETURN)?;
        let elapsed = ts_of(ret)?.wrapping_sub(ts_of(call)?);
        let time = if elapsed > u16::MAX as u32 {
            self.saturated += 1;
            u16::MAX
        } else {
            elapsed as u16
        };
        let lock = hash16(int_field(call, 0)?);
        Ok(Event::new(
            EventTypeId::LOCK_ACQ_TIME,
            None,
            vec![Value::Int(time as u64), Value::Int(lock as u64)],
        ))
    }
}

impl Behavior for TaDiff {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault> {
        let [calls, rets] = inputs else {
            return Err(BehaviorFault("ta_diff takes two inputs".into()));
        };
        for (call, ret) in calls.iter().zip(rets) {
            out.push(0, self.diff(call, ret)?)?;
        }
        Ok(())
    }

    fn diagnostics(&self) -> Vec<(String, u64)> {
        vec![("saturated".into(), self.saturated)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProfileRow {
    pub lock: u16,
    pub count: u64,
    pub total: u64,
}

/// Bytes per serialized profile row: lock u16, count u64, total u64.
pub const PROFILE_ROW_BYTES: usize = 18;

impl ProfileRow {
    /// Average in hundredths, rounded half to even.
    pub fn avg_centi(&self) -> u128 {
        if self.count == 0 {
            return 0;
        }
        let num = self.total as u128 * 100;
        let den = self.count as u128;
        let (q, r) = (num / den, num % den);
        match (2 * r).cmp(&den) {
            std::cmp::Ordering::Less => q,
            std::cmp::Ordering::Greater => q + 1,
            std::cmp::Ordering::Equal => q + (q & 1),
        }
    }

    pub fn avg_string(&self) -> String {
        let c = self.avg_centi();
        format!("{}.{:02}", c / 100, c % 100)
    }
}

pub fn encode_profile_rows(rows: &[ProfileRow]) -> Vec<u8> {
    let mut b = Vec::with_capacity(rows.len() * PROFILE_ROW_BYTES);
    for r in rows {
        b.extend_from_slice(&r.lock.to_le_bytes());
        b.extend_from_slice(&r.count.to_le_bytes());
        b.extend_from_slice(&r.total.to_le_bytes());
    }
    b
}

pub fn decode_profile_rows(bytes: &[u8]) -> Option<Vec<ProfileRow>> {
    if !bytes.len().is_multiple_of(PROFILE_ROW_BYTES) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(PROFILE_ROW_BYTES)
            .map(|c| ProfileRow {
                lock: u16::from_le_bytes([c[0], c[1]]),
                count: u64::from_le_bytes(c[2..10].try_into().unwrap()),
                total: u64::from_le_bytes(c[10..18].try_into().unwrap()),
            })
            .collect(),
    )
}

/// Rows of an `EV_LOCK_PROFILE` event.
pub fn profile_rows(e: &Event) -> Option<Vec<ProfileRow>> {
    if e.type_id != EventTypeId::LOCK_PROFILE {
        return None;
    }
    decode_profile_rows(e.payload.first()?.as_bytes()?)
}

/// Cumulative lock statistics; a profile request emits every row.
#[derive(Debug, Default)]
pub struct TaStat {
    stat: BTreeMap<u16, (u64, u64)>,
}

impl TaStat {
    pub fn rows(&self) -> Vec<ProfileRow> {
        self.stat
            .iter()
            .map(|(&lock, &(count, total))| ProfileRow { lock, count, total })
            .collect()
    }

    fn handle(&mut self, e: &Event, out: &mut Outputs) -> Result<(), BehaviorFault> {
        match e.type_id {
            EventTypeId::LOCK_ACQ_TIME => {
                let time = int_field(e, 0)?;
                let lock = int_field(e, 1)? as u16;
                let s = self.stat.entry(lock).or_default();
                s.0 += 1;
                s.1 += time;
                Ok(())
            }
            EventTypeId::SEND_LOCK_PROFILE => {
                let rows = encode_profile_rows(&self.rows());
                if rows.len() > u16::MAX as usize {
                    return Err(BehaviorFault("profile too large for one event".into()));
                }
                out.push(
                    0,
                    Event::new(EventTypeId::LOCK_PROFILE, e.ts, vec![Value::Bytes(rows)]),
                )
            }
            other => Err(BehaviorFault(format!("unexpected type {:#06x}", other.0))),
        }
    }
}

impl Behavior for TaStat {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault> {
        for e in inputs.iter().flatten() {
            self.handle(e, out)?;
        }
        Ok(())
    }

    fn diagnostics(&self) -> Vec<(String, u64)> {
        vec![("locks".into(), self.stat.len() as u64)]
    }
}

/// Owner-set transaction checker.
///
/// A get opens a transaction for its source and raises one race event if
/// any other source holds an open transaction; a set return closes it.
#[derive(Debug, Default)]
pub struct TaCheckBalanceTrans {
    open: BTreeSet<u64>,
    races: u64,
    unknown_source: u64,
}

impl TaCheckBalanceTrans {
    pub fn races(&self) -> u64 {
        self.races
    }

    pub fn unknown_source(&self) -> u64 {
        self.unknown_source
    }

    pub fn check(&mut self, e: &Event) -> Result<Option<Event>, BehaviorFault> {
        let src = int_field(e, 0)?;
        match e.type_id {
            EventTypeId::GET_BALANCE_CALL => {
                let conflict = self.open.iter().any(|&o| o != src);
                self.open.insert(src);
                if conflict {
                    self.races += 1;
                    return Ok(Some(Event::new(EventTypeId::RACE_DETECTED, e.ts, vec![])));
                }
                Ok(None)
            }
            EventTypeId::SET_BALANCE_RETURN => {
                if !self.open.remove(&src) {
                    self.unknown_source += 1;
                }
                Ok(None)
            }
            other => Err(BehaviorFault(format!("unexpected type {:#06x}", other.0))),
        }
    }
}

impl Behavior for TaCheckBalanceTrans {
    fn fire(&mut self, inputs: &[Vec<Event>], out: &mut Outputs) -> Result<(), BehaviorFault> {
        for e in inputs.iter().flatten() {
            if let Some(race) = self.check(e)? {
                out.push(0, race)?;
            }
        }
        Ok(())
    }

    fn diagnostics(&self) -> Vec<(String, u64)> {
        vec![
            ("races".into(), self.races),
            ("unknown_source".into(), self.unknown_source),
        ]
    }
}

/// Adds `ta_diff`, `ta_stat` and `ta_check_balance_trans` to `reg`.
pub fn register_builtins(reg: &mut BehaviorRegistry) {
    reg.register(
        "ta_diff",
        BehaviorInfo {
            inputs: Arity::Exactly(2),
            outputs: Arity::Exactly(1),
            default_rule: FiringRule::AllOneEach,
            pure: true,
            output_types: vec![EventTypeId::LOCK_ACQ_TIME],
        },
        |_, _| Ok(Box::new(TaDiff::default())),
    );
    reg.register(
        "ta_stat",
        BehaviorInfo {
            inputs: Arity::AtLeast(1),
            outputs: Arity::Exactly(1),
            default_rule: FiringRule::AnyInput,
            pure: true,
            output_types: vec![EventTypeId::LOCK_PROFILE],
        },
        |_, _| Ok(Box::new(TaStat::default())),
    );
    reg.register(
        "ta_check_balance_trans",
        BehaviorInfo {
            inputs: Arity::Exactly(1),
            outputs: Arity::Exactly(1),
            default_rule: FiringRule::AllOneEach,
            pure: true,
            output_types: vec![EventTypeId::RACE_DETECTED],
        },
        |_, _| Ok(Box::new(TaCheckBalanceTrans::default())),
    );
}

/// All built-in behaviors.
pub fn behavior_registry() -> BehaviorRegistry {
    let mut reg = BehaviorRegistry::with_builtins();
    register_builtins(&mut reg);
    reg
}

pub const DEFAULT_TOP_N: usize = 10;

/// Listing-style lock contention table, most acquired first; ties by hash.
///
/// `labels` maps lock hashes to the mutex identity printed in the first
/// column; unlabeled locks print their hash.
pub fn format_profile_table(
    rows: &[ProfileRow],
    top_n: usize,
    labels: Option<&BTreeMap<u16, u64>>,
) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| b.count.cmp(&a.count).then(a.lock.cmp(&b.lock)));
    let mut s = format!(
        "{:<19}{:>8}{:>12}{:>10}\n",
        "     mutex", "# acq.", "sum [ns]", "avg [ns]"
    );
    for (i, r) in sorted.iter().take(top_n).enumerate() {
        let id = labels
            .and_then(|l| l.get(&r.lock))
            .copied()
            .unwrap_or(r.lock as u64);
        s.push_str(&format!(
            "({:02}) {:>14}{:>8}{:>12}{:>10}\n",
            i + 1,
            format!("{id:#x}"),
            r.count,
            r.total,
            r.avg_string()
        ));
    }
    s
}

/// `"{ts}  {type}  {payload}"`, fields as `name=value`, bytes in hex. Events
/// without payload end after the type name.
pub fn format_event_line(types: &EventTypeRegistry, e: &Event) -> String {
    let ts = e.ts.map_or_else(|| "-".to_string(), |t| t.to_string());
    let (name, fields) = match types.schema(e.type_id) {
        Ok(s) => (s.name.clone(), s.fields.iter().map(|f| f.name.clone()).collect()),
        Err(_) => (format!("{:#06x}", e.type_id.0), Vec::new()),
    };
    let payload: Vec<String> = e
        .payload
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let key = fields.get(i).cloned().unwrap_or_else(|| format!("f{i}"));
            match v {
                Value::Int(x) => format!("{key}={x}"),
                Value::Bytes(b) => {
                    let hex: String = b.iter().map(|x| format!("{x:02x}")).collect();
                    format!("{key}={hex}")
                }
            }
        })
        .collect();
    if payload.is_empty() {
        return format!("{ts}  {name}");
    }
    format!("{ts}  {name}  {}", payload.join(" "))
}

pub fn format_event_log(types: &EventTypeRegistry, events: &[Event]) -> String {
    events
        .iter()
        .map(|e| format_event_line(types, e) + "\n")
        .collect()
}

/// A complete diagnosis application: per-CPU triggers plus the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AppPreset {
    pub triggers: BTreeMap<CpuId, Vec<TriggerCondition>>,
    pub graph: ActorGraph,
}

fn pc_trigger(id: u16, pc: u32, args: u8, ty: EventTypeId) -> TriggerCondition {
    TriggerCondition {
        id,
        kind: TriggerKind::PcMatch { pc },
        capture: CaptureSpec {
            registers: vec![],
            arg_count: args,
            include_timestamp: true,
        },
        emit_type: ty,
    }
}

fn return_trigger(id: u16, entry_pc: u32, args: u8, ty: EventTypeId) -> TriggerCondition {
    TriggerCondition {
        kind: TriggerKind::FunctionReturn { entry_pc },
        ..pc_trigger(id, 0, args, ty)
    }
}

fn port(name: &str, types: &[EventTypeId], reg: &EventTypeRegistry) -> SourcePort {
    SourcePort {
        port: name.into(),
        types: types
            .iter()
            .map(|t| reg.name_of(*t).expect("built-in type").to_string())
            .collect(),
    }
}

fn chan(from: String, to: String) -> ChannelSpec {
    ChannelSpec {
        from,
        to,
        capacity: None,
    }
}

fn actor(name: &str, behavior: &str, inputs: Vec<String>, output: &str) -> ActorSpec {
    ActorSpec {
        name: name.into(),
        behavior: behavior.into(),
        inputs,
        outputs: vec![output.into()],
        params: Params::new(),
        rule: None,
        pure: None,
    }
}

/// Transaction checker on the bank CPU; race events go to an event log.
pub fn race_check_app(bank_cpu: CpuId) -> AppPreset {
    let reg = EventTypeRegistry::builtin();
    let triggers = vec![
        pc_trigger(
            0,
            bank_atm::layout::GET_BALANCE,
            1,
            EventTypeId::GET_BALANCE_CALL,
        ),
        return_trigger(
            1,
            bank_atm::layout::SET_BALANCE,
            1,
            EventTypeId::SET_BALANCE_RETURN,
        ),
    ];
    let eg = format!("eg{bank_cpu}");
    let graph = ActorGraph {
        sources: vec![SourceSpec {
            name: eg.clone(),
            kind: SourceKind::Generator { cpu: bank_cpu },
            outputs: vec![port(
                "bank",
                &[EventTypeId::GET_BALANCE_CALL, EventTypeId::SET_BALANCE_RETURN],
                &reg,
            )],
        }],
        actors: vec![actor("check", "ta_check_balance_trans", vec!["in".into()], "race")],
        sinks: vec![SinkSpec {
            name: "races".into(),
            kind: "event_log".into(),
            inputs: vec!["in".into()],
        }],
        channels: vec![
            chan(format!("{eg}.bank"), "check.in".into()),
            chan("check.race".into(), "races.in".into()),
        ],
    };
    AppPreset {
        triggers: BTreeMap::from([(bank_cpu, triggers)]),
        graph,
    }
}

/// Every message sent or received on `cpus`, logged unprocessed.
pub fn message_log_app(cpus: &[CpuId]) -> AppPreset {
    let reg = EventTypeRegistry::builtin();
    let mut triggers = BTreeMap::new();
    let mut graph = ActorGraph::default();
    let mut inputs = Vec::new();
    for &c in cpus {
        triggers.insert(
            c,
            vec![
                pc_trigger(0, bank_atm::layout::MSG_SEND, 2, EventTypeId::MSG_SEND),
                pc_trigger(1, bank_atm::layout::MSG_RECV, 2, EventTypeId::MSG_RECV),
            ],
        );
        let eg = format!("eg{c}");
        graph.sources.push(SourceSpec {
            name: eg.clone(),
            kind: SourceKind::Generator { cpu: c },
            outputs: vec![port("msgs", &[EventTypeId::MSG_SEND, EventTypeId::MSG_RECV], &reg)],
        });
        let input = format!("cpu{c}");
        graph
            .channels
            .push(chan(format!("{eg}.msgs"), format!("messages.{input}")));
        inputs.push(input);
    }
    graph.sinks.push(SinkSpec {
        name: "messages".into(),
        kind: "event_log".into(),
        inputs,
    });
    AppPreset { triggers, graph }
}

/// One TA_DIFF per CPU feeding a shared TA_STAT, flushed at the end of the
/// run and every `flush_period` cycles if given.
pub fn lock_profile_app(cpus: &[CpuId], flush_period: Option<u32>) -> AppPreset {
    let reg = EventTypeRegistry::builtin();
    let mut triggers = BTreeMap::new();
    let mut graph = ActorGraph::default();
    let mut stat_inputs = Vec::new();
    for &c in cpus {
        triggers.insert(
            c,
            vec![
                pc_trigger(0, lock_bench::layout::MUTEX_LOCK, 1, EventTypeId::LOCK_CALL),
                return_trigger(1, lock_bench::layout::MUTEX_LOCK, 0, EventTypeId::LOCK_RETURN),
            ],
        );
        let eg = format!("eg{c}");
        let diff = format!("diff{c}");
        graph.sources.push(SourceSpec {
            name: eg.clone(),
            kind: SourceKind::Generator { cpu: c },
            outputs: vec![
                port("call", &[EventTypeId::LOCK_CALL], &reg),
                port("ret", &[EventTypeId::LOCK_RETURN], &reg),
            ],
        });
        graph.actors.push(actor(
            &diff,
            "ta_diff",
            vec!["call".into(), "ret".into()],
            "acq",
        ));
        graph
            .channels
            .push(chan(format!("{eg}.call"), format!("{diff}.call")));
        graph
            .channels
            .push(chan(format!("{eg}.ret"), format!("{diff}.ret")));
        let input = format!("acq{c}");
        graph
            .channels
            .push(chan(format!("{diff}.acq"), format!("stat.{input}")));
        stat_inputs.push(input);
    }
    graph.sources.push(SourceSpec {
        name: "flush".into(),
        kind: SourceKind::Flush {
            period: flush_period,
        },
        outputs: vec![port("out", &[EventTypeId::SEND_LOCK_PROFILE], &reg)],
    });
    stat_inputs.push("flush".into());
    graph.actors.push(actor("stat", "ta_stat", stat_inputs, "profile"));
    graph.channels.push(chan("flush.out".into(), "stat.flush".into()));
    graph.sinks.push(SinkSpec {
        name: "profile".into(),
        kind: "profile_table".into(),
        inputs: vec!["in".into()],
    });
    graph
        .channels
        .push(chan("stat.profile".into(), "profile.in".into()));
    AppPreset { triggers, graph }
}
