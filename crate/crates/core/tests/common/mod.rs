// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Helpers shared by the integration tests: independent oracles and
//! synthetic inputs.

#![allow(dead_code)]

use diasys::event_gen::{CaptureSpec, TriggerCondition, TriggerKind};
use diasys::event_model::{Event, EventSchema, EventTypeId, EventTypeRegistry, FieldKind, FieldSpec, Value};
use diasys::platform::TimedInputs;
use diasys::workloads::rng::SplitMix64;
use diasys::workloads::{GroundTruth, InstrKind, TraceRecord, Writeback};

/// Conflicting arrivals by brute force: a transaction conflicts when some
/// other owner's transaction began earlier and had not yet been written
/// back at its start.
pub fn race_oracle(truth: &GroundTruth) -> u64 {
    let t = &truth.transactions;
    let mut n = 0;
    for (i, a) in t.iter().enumerate() {
        let conflict = t.iter().enumerate().any(|(j, b)| {
            j != i
                && b.owner != a.owner
                && b.get_cycle < a.get_cycle
                && b.set_cycle.is_none_or(|s| s > a.get_cycle)
        });
        n += conflict as u64;
    }
    n
}

/// Fraction of transactions overlapping any other, counted pairwise.
pub fn interleaved_oracle(truth: &GroundTruth) -> f64 {
    let t = &truth.transactions;
    if t.is_empty() {
        return 0.0;
    }
    let end = |x: &diasys::workloads::Transaction| x.set_cycle.map_or(u64::MAX, u64::from);
    let hit = (0..t.len())
        .filter(|&i| {
            (0..t.len()).any(|j| {
                j != i
                    && (t[i].get_cycle as u64) < end(&t[j])
                    && (t[j].get_cycle as u64) < end(&t[i])
            })
        })
        .count();
    hit as f64 / t.len() as f64
}

pub fn lock_call(ts: u32, mutex: u64) -> Event {
    Event::new(EventTypeId::LOCK_CALL, Some(ts), vec![Value::Int(mutex)])
}

pub fn lock_return(ts: u32) -> Event {
    Event::new(EventTypeId::LOCK_RETURN, Some(ts), vec![])
}

/// `pairs` lock call/return pairs per generator, `gap` cycles apart, with a
/// `hold` cycle acquisition time, cycling through `mutexes` locks.
pub fn lock_burst(sources: &[&str], pairs: u32, gap: u32, hold: u32, mutexes: u64) -> TimedInputs {
    let mut m = TimedInputs::new();
    for (k, s) in sources.iter().enumerate() {
        let mut v = Vec::with_capacity(2 * pairs as usize);
        for i in 0..pairs {
            let t = i * gap + k as u32;
            let mutex = 0x1c3_6500 + 0xb0 * ((i as u64 + k as u64) % mutexes);
            v.push((t, lock_call(t, mutex)));
            v.push((t + hold, lock_return(t + hold)));
        }
        m.insert(s.to_string(), v);
    }
    m
}

pub const RET_EVENT: EventTypeId = EventTypeId(0x0100);
pub const REG_RV: u8 = 11;
pub const REG_LINK: u8 = 9;

/// Builtin registry plus a return event carrying the callee's r11.
pub fn registry_with_return_event() -> EventTypeRegistry {
    let mut r = EventTypeRegistry::builtin();
    r.register(
        RET_EVENT,
        EventSchema::new("EV_TEST_RETURN", true, vec![FieldSpec::new("rv", FieldKind::U32)]),
    )
    .unwrap();
    r
}

pub fn function_entry(f: usize) -> u32 {
    0x0001_0000 + 0x1000 * f as u32
}

pub fn return_trigger(id: u16, f: usize) -> TriggerCondition {
    TriggerCondition {
        id,
        kind: TriggerKind::FunctionReturn {
            entry_pc: function_entry(f),
        },
        capture: CaptureSpec {
            registers: vec![REG_RV],
            arg_count: 0,
            include_timestamp: true,
        },
        emit_type: RET_EVENT,
    }
}

/// Random, non-recursive call tree on one CPU. Function `f` only calls
/// functions with a larger index, so no function is ever active twice.
/// Every function stores its own index in r11 right before returning.
pub struct CallTree {
    pub records: Vec<TraceRecord>,
    /// `(resume cycle, callee)` of every completed call, in order.
    pub returns: Vec<(u32, usize)>,
    pub max_depth: usize,
}

/// With `dive`, the first tree descends as deep as `depth_limit` allows.
pub fn random_call_tree(
    rng: &mut SplitMix64,
    n_funcs: usize,
    depth_limit: usize,
    budget: usize,
    dive: bool,
) -> CallTree {
    let mut t = CallTree {
        records: Vec::new(),
        returns: Vec::new(),
        max_depth: 0,
    };
    let mut calls_left = budget;
    // root body runs at a caller address below every function
    let mut pc = 0x0000_8000;
    let mut first = true;
    while calls_left > 0 {
        let f = if dive && first {
            0
        } else {
            rng.range_inclusive(0, n_funcs as u64 - 1) as usize
        };
        let d = Descent {
            n_funcs,
            depth_limit,
            dive: dive && first,
        };
        first = false;
        pc = emit_call(&mut t, rng, &d, pc, f, 1, &mut calls_left);
        plain(&mut t, pc);
        pc += 4;
    }
    t
}

fn plain(t: &mut CallTree, pc: u32) {
    let cycle = t.records.len() as u32;
    t.records.push(TraceRecord::plain(0, cycle, pc));
}

fn with_wb(t: &mut CallTree, pc: u32, reg: u8, value: u32) {
    plain(t, pc);
    t.records.last_mut().unwrap().writeback = Some(Writeback { reg, value });
}

struct Descent {
    n_funcs: usize,
    depth_limit: usize,
    dive: bool,
}

/// Emits a call from `site` into `f` and returns the caller's resume PC.
fn emit_call(
    t: &mut CallTree,
    rng: &mut SplitMix64,
    d: &Descent,
    site: u32,
    f: usize,
    depth: usize,
    calls_left: &mut usize,
) -> u32 {
    let n_funcs = d.n_funcs;
    *calls_left = calls_left.saturating_sub(1);
    t.max_depth = t.max_depth.max(depth);
    let link = site + 8;
    with_wb(t, site, REG_LINK, link);
    plain(t, site + 4);
    let mut entry = TraceRecord::plain(0, t.records.len() as u32, function_entry(f));
    entry.kind = InstrKind::Call;
    entry.link_address = link;
    t.records.push(entry);
    let mut pc = function_entry(f) + 4;
    let steps = rng.range_inclusive(0, 6);
    for step in 0..steps.max(d.dive as u64) {
        let can_call = depth < d.depth_limit && f + 1 < n_funcs && *calls_left > 0;
        let forced = d.dive && step == 0;
        if can_call && (forced || rng.range_inclusive(0, 2) == 0) {
            // favour the next function so that deep chains actually occur
            let g = if forced || rng.range_inclusive(0, 1) == 0 {
                f + 1
            } else {
                rng.range_inclusive(f as u64 + 1, n_funcs as u64 - 1) as usize
            };
            pc = emit_call(t, rng, d, pc, g, depth + 1, calls_left);
        } else {
            plain(t, pc);
            pc += 4;
        }
    }
    with_wb(t, pc, REG_RV, f as u32);
    plain(t, pc + 4);
    plain(t, pc + 8);
    let cycle = t.records.len() as u32;
    let mut resume = TraceRecord::plain(0, cycle, link);
    resume.kind = InstrKind::ReturnSite;
    t.records.push(resume);
    t.returns.push((cycle, f));
    link
}

/// Software call stack replaying the trace: returns `(cycle, callee entry)`
/// for each frame popped at its link address.
pub fn call_stack_oracle(records: &[TraceRecord]) -> Vec<(u32, u32)> {
    let mut stack: Vec<(u32, u32)> = Vec::new();
    let mut out = Vec::new();
    for r in records {
        if let Some(&(entry, link)) = stack.last() {
            if r.pc == link {
                stack.pop();
                out.push((r.cycle, entry));
            }
        }
        if r.kind == InstrKind::Call {
            stack.push((r.pc, r.link_address));
        }
    }
    out
}
