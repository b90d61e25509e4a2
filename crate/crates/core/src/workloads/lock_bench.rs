// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Multi-threaded mutex benchmark.
//!
//! Thread `i` is pinned to CPU `i`. Every iteration does some private work,
//! then calls `pthread_mutex_lock` on a randomly chosen mutex (spinning on the
//! lock word until it is free), holds it for a while and releases it with
//! `pthread_mutex_unlock`. No new iteration starts at or after `duration`;
//! iterations already running complete, so every lock call has its return.

use serde::{Deserialize, Serialize};

use super::cpu::Cpu;
use super::rng::SplitMix64;
use super::{
    Acquisition, GroundTruth, GroundTruthKind, Workload, WorkloadError, WorkloadKind,
    WorkloadSpec, REG_ARG0,
};

pub mod layout {
    pub const MUTEX_LOCK: u32 = 0x5000;
    pub const MUTEX_UNLOCK: u32 = 0x5100;
    pub const THREAD_LOOP: u32 = 0x6000;
    pub const CRITICAL: u32 = 0x6100;
    pub const IDLE_LOOP: u32 = 0x4000;
    pub const MUTEX_BASE: u32 = 0x01c3_6500;
    pub const MUTEX_STRIDE: u32 = 0xb0;
    pub const STACK_TOP: u32 = 0x0020_0000;
    pub const STACK_STRIDE: u32 = 0x0001_0000;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockBenchParams {
    pub n_threads: u8,
    pub n_mutexes: u32,
    /// Private work between lock sections, uniform in `[work_min, work_max]`.
    pub work_min: u32,
    pub work_max: u32,
    /// Critical section length, uniform in `[hold_min, hold_max]`.
    pub hold_min: u32,
    pub hold_max: u32,
}

pub fn small_preset() -> WorkloadSpec {
    WorkloadSpec {
        seed: 1,
        cpus: 4,
        duration: 200_000,
        kind: WorkloadKind::LockBench(LockBenchParams {
            n_threads: 4,
            n_mutexes: 3,
            work_min: 50,
            work_max: 400,
            hold_min: 20,
            hold_max: 200,
        }),
    }
}

/// Address of mutex `index`.
pub fn mutex_address(index: u32) -> u32 {
    layout::MUTEX_BASE + index * layout::MUTEX_STRIDE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Thread {
    Work,
    Lock,
    Spin { call_cycle: u32 },
    Hold,
    Unlock,
    Release,
    Done,
}

#[derive(Debug, Clone, Copy, Default)]
struct Mutex {
    holder: Option<u8>,
    released_at: u32,
}

pub(super) fn generate(spec: &WorkloadSpec, p: &LockBenchParams) -> Result<Workload, WorkloadError> {
    if p.n_threads == 0 || p.n_mutexes == 0 {
        return Err(WorkloadError::InvalidSpec(
            "lock_bench needs at least one thread and one mutex".into(),
        ));
    }
    if spec.cpus < p.n_threads {
        return Err(WorkloadError::InvalidSpec(format!(
            "{} threads need {} cpus, got {}",
            p.n_threads, p.n_threads, spec.cpus
        )));
    }
    if p.work_min > p.work_max || p.hold_min > p.hold_max {
        return Err(WorkloadError::InvalidSpec("empty distribution range".into()));
    }
    use layout::*;
    let threads = p.n_threads as usize;
    let mut cpus: Vec<Cpu> = (0..spec.cpus)
        .map(|i| Cpu::new(i, STACK_TOP - i as u32 * STACK_STRIDE))
        .collect();
    let mut rngs: Vec<SplitMix64> = (0..threads)
        .map(|i| SplitMix64::derive(spec.seed, i as u64))
        .collect();
    let mut state = vec![Thread::Work; threads];
    let mut held = vec![0u32; threads];
    let mut links = vec![0u32; threads];
    let mut mutexes = vec![Mutex::default(); p.n_mutexes as usize];
    let mut truth = GroundTruth::new(GroundTruthKind::LockBench);

    loop {
        let pick = (0..threads)
            .filter(|&t| state[t] != Thread::Done)
            .min_by_key(|&t| (cpus[t].cycle, t));
        let Some(t) = pick else { break };
        let c = &mut cpus[t];
        let rng = &mut rngs[t];
        state[t] = match state[t] {
            Thread::Work => {
                if c.cycle >= spec.duration {
                    Thread::Done
                } else {
                    let w = rng.range_inclusive(p.work_min as u64, p.work_max as u64) as u32;
                    let until = c.cycle.saturating_add(w);
                    c.spin_until(THREAD_LOOP, until);
                    held[t] = rng.range_inclusive(0, p.n_mutexes as u64 - 1) as u32;
                    Thread::Lock
                }
            }
            Thread::Lock => {
                let addr = mutex_address(held[t]);
                c.alu(THREAD_LOOP + 0x20, REG_ARG0, addr & 0xFFFF_0000);
                c.alu(THREAD_LOOP + 0x24, REG_ARG0, addr);
                let (link, entry) = c.call(THREAD_LOOP + 0x28, MUTEX_LOCK);
                links[t] = link;
                c.prologue(MUTEX_LOCK + 4, link);
                Thread::Spin { call_cycle: entry }
            }
            Thread::Spin { call_cycle } => {
                let m = &mut mutexes[held[t] as usize];
                let now = c.cycle;
                let free = m.holder.is_none() && m.released_at < now;
                c.load(MUTEX_LOCK + 12, 13, (!free) as u32);
                if free {
                    m.holder = Some(t as u8);
                    c.store(MUTEX_LOCK + 16, REG_ARG0, 0, 1);
                    c.epilogue(MUTEX_LOCK + 20);
                    let ret = c.ret(MUTEX_LOCK + 24, links[t]);
                    truth
                        .acquisitions
                        .entry(mutex_address(held[t]) as u64)
                        .or_default()
                        .push(Acquisition {
                            cpu: t as u8,
                            call_cycle,
                            return_cycle: ret,
                        });
                    Thread::Hold
                } else {
                    c.nop(MUTEX_LOCK + 16);
                    c.nop(MUTEX_LOCK + 20);
                    Thread::Spin { call_cycle }
                }
            }
            Thread::Hold => {
                let h = rng.range_inclusive(p.hold_min as u64, p.hold_max as u64) as u32;
                let until = c.cycle.saturating_add(h);
                c.spin_until(CRITICAL, until);
                Thread::Unlock
            }
            Thread::Unlock => {
                c.alu(CRITICAL + 0x20, REG_ARG0, mutex_address(held[t]));
                let (link, _) = c.call(CRITICAL + 0x24, MUTEX_UNLOCK);
                links[t] = link;
                c.prologue(MUTEX_UNLOCK + 4, link);
                Thread::Release
            }
            Thread::Release => {
                let m = &mut mutexes[held[t] as usize];
                let at = c.store(MUTEX_UNLOCK + 12, REG_ARG0, 0, 0);
                m.holder = None;
                m.released_at = at;
                c.epilogue(MUTEX_UNLOCK + 16);
                c.ret(MUTEX_UNLOCK + 20, links[t]);
                Thread::Work
            }
            Thread::Done => Thread::Done,
        };
    }

    let end = cpus.iter().map(|c| c.cycle).max().unwrap_or(0).max(1);
    for c in cpus.iter_mut() {
        c.spin_until(IDLE_LOOP, end);
    }
    for list in truth.acquisitions.values_mut() {
        list.sort_by_key(|a| (a.call_cycle, a.cpu));
    }
    truth.end_cycle = end;
    truth.n_data_accesses = cpus.iter().map(|c| c.accesses_before(end)).sum();
    let streams: Vec<_> = cpus.into_iter().map(|c| c.records).collect();
    truth.n_instructions = streams.iter().map(|s| s.len() as u64).sum();
    Ok(Workload { streams, truth })
}
