// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Bank/ATM message-passing application with a lost-update race.
//!
//! CPU 0 runs `bank`, CPUs 1 and 2 run `atm0` and `atm1`. Each ATM waits a
//! random number of cycles, requests the balance, decrements it and writes it
//! back. Messages travel through per-CPU mailboxes with a fixed latency. The
//! bank serves requests one at a time in arrival order, so two ATMs can
//! interleave their read-modify-write sequences.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::cpu::Cpu;
use super::rng::SplitMix64;
use super::{
    overlapping_pairs, truncate_streams, GroundTruth, GroundTruthKind, Transaction, Workload,
    WorkloadError, WorkloadKind, WorkloadSpec, REG_ARG0, REG_RV,
};

/// Code layout of the simulated binary.
pub mod layout {
    pub const GET_BALANCE: u32 = 0x1000;
    pub const SET_BALANCE: u32 = 0x1100;
    pub const MSG_RECV: u32 = 0x1200;
    pub const MSG_SEND: u32 = 0x1300;
    pub const BANK_LOOP: u32 = 0x2000;
    pub const ATM_LOOP: u32 = 0x3000;
    pub const IDLE_LOOP: u32 = 0x4000;
    pub const BALANCE_ADDR: u32 = 0x0001_0000;
    pub const STACK_TOP: u32 = 0x0010_0000;
    pub const STACK_STRIDE: u32 = 0x0001_0000;
}

pub const MSG_GET_REQ: u32 = 1;
pub const MSG_GET_RESP: u32 = 2;
pub const MSG_SET_REQ: u32 = 3;

/// Message transport latency in cycles.
pub const MSG_LATENCY: u32 = 8;

const BANK: usize = 0;

fn default_initial_balance() -> u32 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankAtmParams {
    /// Transactions performed by each ATM.
    pub n_transactions: u32,
    /// ATM waits are uniform in `[0, max_wait]` cycles.
    pub max_wait: u32,
    #[serde(default = "default_initial_balance")]
    pub initial_balance: u32,
}

/// Parameter set tuned so that about 44 % of transactions interleave.
pub fn tuned_preset() -> WorkloadSpec {
    WorkloadSpec {
        seed: 1,
        cpus: 3,
        duration: 1 << 26,
        kind: WorkloadKind::BankAtm(BankAtmParams {
            n_transactions: 200,
            max_wait: 500,
            initial_balance: default_initial_balance(),
        }),
    }
}

#[derive(Debug, Clone, Copy)]
struct Msg {
    arrival: u32,
    src: u32,
    kind: u32,
    value: u32,
}

#[derive(Debug, Default)]
struct Mailbox {
    queue: VecDeque<Msg>,
}

impl Mailbox {
    fn post(&mut self, msg: Msg) {
        let at = self
            .queue
            .iter()
            .position(|m| (m.arrival, m.src) > (msg.arrival, msg.src))
            .unwrap_or(self.queue.len());
        self.queue.insert(at, msg);
    }

    fn take_ready(&mut self, now: u32) -> Option<Msg> {
        match self.queue.front() {
            Some(m) if m.arrival <= now => self.queue.pop_front(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Atm {
    Wait { until: u32 },
    SendGet,
    AwaitResp,
    Done,
}

struct Sim {
    cpus: Vec<Cpu>,
    mailboxes: Vec<Mailbox>,
    balance: u32,
    truth: GroundTruth,
    open: BTreeMap<u32, usize>,
}

impl Sim {
    /// `msg_send(dest, kind, value)`; the store into the destination
    /// mailbox publishes the message.
    fn msg_send(&mut self, cpu: usize, site: u32, dest: u32, kind: u32, value: u32) {
        use layout::MSG_SEND;
        let c = &mut self.cpus[cpu];
        c.alu(site - 12, REG_ARG0, dest);
        c.alu(site - 8, REG_ARG0 + 1, kind);
        c.alu(site - 4, REG_ARG0 + 2, value);
        let (link, _) = c.call(site, MSG_SEND);
        c.prologue(MSG_SEND + 4, link);
        let sent = c.store(MSG_SEND + 12, 13, 0, value);
        c.alu(MSG_SEND + 16, REG_RV, 0);
        c.epilogue(MSG_SEND + 20);
        c.ret(MSG_SEND + 24, link);
        let src = c.id as u32;
        self.mailboxes[dest as usize].post(Msg {
            arrival: sent + MSG_LATENCY,
            src,
            kind,
            value,
        });
    }

    /// Loads the message header into r3..r5 and calls `msg_recv(src, kind)`.
    fn msg_recv(&mut self, cpu: usize, site: u32, msg: &Msg) {
        use layout::MSG_RECV;
        let c = &mut self.cpus[cpu];
        c.load(site - 12, REG_ARG0, msg.src);
        c.load(site - 8, REG_ARG0 + 1, msg.kind);
        c.load(site - 4, REG_ARG0 + 2, msg.value);
        let (link, _) = c.call(site, MSG_RECV);
        c.prologue(MSG_RECV + 4, link);
        c.alu(MSG_RECV + 12, REG_RV, 0);
        c.epilogue(MSG_RECV + 16);
        c.ret(MSG_RECV + 20, link);
    }

    fn bank_step(&mut self, atms_done: bool) -> bool {
        use layout::*;
        let now = self.cpus[BANK].cycle;
        let ready = self.mailboxes[BANK].take_ready(now);
        {
            let c = &mut self.cpus[BANK];
            c.load(BANK_LOOP, 13, ready.is_some() as u32);
            c.nop(BANK_LOOP + 4);
            c.nop(BANK_LOOP + 8);
        }
        let Some(msg) = ready else {
            return atms_done && self.mailboxes[BANK].queue.is_empty();
        };
        self.msg_recv(BANK, BANK_LOOP + 0x18, &msg);
        let c = &mut self.cpus[BANK];
        c.nop(BANK_LOOP + 0x24);
        c.nop(BANK_LOOP + 0x28);
        match msg.kind {
            MSG_GET_REQ => {
                let (link, entry) = c.call(BANK_LOOP + 0x2c, GET_BALANCE);
                c.prologue(GET_BALANCE + 4, link);
                c.load(GET_BALANCE + 12, REG_RV, self.balance);
                c.epilogue(GET_BALANCE + 16);
                c.ret(GET_BALANCE + 20, link);
                self.open.insert(msg.src, self.truth.transactions.len());
                self.truth.transactions.push(Transaction {
                    owner: msg.src,
                    get_cycle: entry,
                    set_cycle: None,
                });
                let balance = self.balance;
                self.msg_send(BANK, BANK_LOOP + 0x4c, msg.src, MSG_GET_RESP, balance);
            }
            MSG_SET_REQ => {
                c.alu(BANK_LOOP + 0x5c, REG_ARG0 + 1, msg.value);
                let (link, _) = c.call(BANK_LOOP + 0x60, SET_BALANCE);
                c.prologue(SET_BALANCE + 4, link);
                c.store(SET_BALANCE + 12, 13, 0, msg.value);
                self.balance = msg.value;
                c.epilogue(SET_BALANCE + 16);
                let done = c.ret(SET_BALANCE + 20, link);
                if let Some(i) = self.open.remove(&msg.src) {
                    self.truth.transactions[i].set_cycle = Some(done);
                }
            }
            _ => {}
        }
        let c = &mut self.cpus[BANK];
        c.nop(BANK_LOOP + 0x70);
        c.nop(BANK_LOOP + 0x74);
        false
    }

    fn atm_step(&mut self, cpu: usize, state: Atm, rng: &mut SplitMix64, left: &mut u32, max_wait: u32) -> Atm {
        use layout::*;
        match state {
            Atm::Wait { until } => {
                self.cpus[cpu].spin_until(ATM_LOOP, until);
                Atm::SendGet
            }
            Atm::SendGet => {
                self.msg_send(cpu, ATM_LOOP + 0x1c, 0, MSG_GET_REQ, 0);
                Atm::AwaitResp
            }
            Atm::AwaitResp => {
                let now = self.cpus[cpu].cycle;
                let ready = self.mailboxes[cpu].take_ready(now);
                {
                    let c = &mut self.cpus[cpu];
                    c.load(ATM_LOOP + 0x28, 13, ready.is_some() as u32);
                    c.nop(ATM_LOOP + 0x2c);
                    c.nop(ATM_LOOP + 0x30);
                }
                let Some(msg) = ready else {
                    return Atm::AwaitResp;
                };
                self.msg_recv(cpu, ATM_LOOP + 0x40, &msg);
                let new_balance = msg.value.wrapping_sub(1);
                self.cpus[cpu].alu(ATM_LOOP + 0x4c, REG_ARG0 + 2, new_balance);
                self.msg_send(cpu, ATM_LOOP + 0x5c, 0, MSG_SET_REQ, new_balance);
                let c = &mut self.cpus[cpu];
                c.nop(ATM_LOOP + 0x64);
                c.nop(ATM_LOOP + 0x68);
                *left -= 1;
                if *left == 0 {
                    Atm::Done
                } else {
                    let wait = rng.range_inclusive(0, max_wait as u64) as u32;
                    Atm::Wait {
                        until: self.cpus[cpu].cycle.saturating_add(wait),
                    }
                }
            }
            Atm::Done => Atm::Done,
        }
    }
}

pub(super) fn generate(spec: &WorkloadSpec, p: &BankAtmParams) -> Result<Workload, WorkloadError> {
    if spec.cpus < 3 {
        return Err(WorkloadError::InvalidSpec(format!(
            "bank_atm needs at least 3 cpus, got {}",
            spec.cpus
        )));
    }
    if p.n_transactions == 0 {
        return Err(WorkloadError::InvalidSpec(
            "n_transactions must be positive".into(),
        ));
    }
    let n = spec.cpus as usize;
    let mut sim = Sim {
        cpus: (0..n)
            .map(|i| Cpu::new(i as u8, layout::STACK_TOP - i as u32 * layout::STACK_STRIDE))
            .collect(),
        mailboxes: (0..n).map(|_| Mailbox::default()).collect(),
        balance: p.initial_balance,
        truth: GroundTruth::new(GroundTruthKind::BankAtm),
        open: BTreeMap::new(),
    };
    let mut rngs: Vec<SplitMix64> = (1..=2).map(|i| SplitMix64::derive(spec.seed, i)).collect();
    let mut atm: Vec<Atm> = rngs
        .iter_mut()
        .map(|r| Atm::Wait {
            until: r.range_inclusive(0, p.max_wait as u64) as u32,
        })
        .collect();
    let mut left = [p.n_transactions; 2];
    let mut bank_done = false;

    loop {
        // advance the CPU that is furthest behind; ties go to the lowest id
        let mut pick: Option<usize> = None;
        for cpu in 0..3 {
            let active = if cpu == BANK {
                !bank_done
            } else {
                atm[cpu - 1] != Atm::Done
            };
            if active && pick.is_none_or(|p| sim.cpus[cpu].cycle < sim.cpus[p].cycle) {
                pick = Some(cpu);
            }
        }
        let Some(cpu) = pick else { break };
        if sim.cpus[cpu].cycle >= spec.duration {
            break;
        }
        if cpu == BANK {
            bank_done = sim.bank_step(atm.iter().all(|a| *a == Atm::Done));
        } else {
            let k = cpu - 1;
            atm[k] = sim.atm_step(cpu, atm[k], &mut rngs[k], &mut left[k], p.max_wait);
        }
    }

    let end = sim
        .cpus
        .iter()
        .map(|c| c.cycle)
        .max()
        .unwrap_or(0)
        .min(spec.duration);
    for c in sim.cpus.iter_mut() {
        let pc = if c.id == 0 {
            layout::BANK_LOOP
        } else {
            layout::IDLE_LOOP
        };
        c.spin_until(pc, end);
    }

    let mut truth = sim.truth;
    truth.transactions.retain(|t| t.get_cycle < end);
    for t in truth.transactions.iter_mut() {
        if t.set_cycle.is_some_and(|s| s >= end) {
            t.set_cycle = None;
        }
    }
    truth.overlapping_pairs = overlapping_pairs(&truth.transactions);
    truth.initial_balance = p.initial_balance;
    truth.final_balance = sim.balance;
    truth.end_cycle = end;

    let mut streams: Vec<_> = sim.cpus.iter_mut().map(|c| std::mem::take(&mut c.records)).collect();
    truncate_streams(&mut streams, end);
    truth.n_instructions = streams.iter().map(|s| s.len() as u64).sum();
    truth.n_data_accesses = sim
        .cpus
        .iter()
        .map(|c| c.accesses_before(end))
        .sum();
    Ok(Workload { streams, truth })
}
