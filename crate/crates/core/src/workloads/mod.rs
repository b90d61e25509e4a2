// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Synthetic observed systems.
//!
//! The generators simulate multi-core software at the granularity of retired
//! instructions: every record is one instruction with its PC and the side
//! effects an event generator can see (register writeback, stack store, link
//! address on calls). CPUs retire one instruction per cycle; waiting is done
//! in busy loops, as on a bare-metal system.

pub mod bank_atm;
mod cpu;
pub mod event_log;
pub mod lock_bench;
pub mod rng;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bank_atm::BankAtmParams;
pub use event_log::{read_event_log, write_event_log, EventLogError, LogEntry};
pub use lock_bench::LockBenchParams;

pub type CpuId = u8;

/// Stack pointer register on OR1K.
pub const REG_SP: u8 = 1;
/// Link register on OR1K.
pub const REG_LINK: u8 = 9;
/// First argument register; arguments 1-6 live in r3..r8.
pub const REG_ARG0: u8 = 3;
/// Return value register.
pub const REG_RV: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrKind {
    Plain,
    /// First instruction of a called function; `link_address` holds the
    /// caller's resume PC.
    Call,
    /// First instruction executed in the caller after a function returned.
    ReturnSite,
    /// `l.sw offset(base), value`
    StoreWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Writeback {
    pub reg: u8,
    pub value: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoreWord {
    pub base_reg: u8,
    pub offset: i16,
    pub value: u32,
}

/// One retired instruction of one CPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cpu: CpuId,
    pub cycle: u32,
    pub pc: u32,
    pub kind: InstrKind,
    /// Valid when `kind == Call`.
    pub link_address: u32,
    pub writeback: Option<Writeback>,
    pub store: Option<StoreWord>,
}

impl TraceRecord {
    pub fn plain(cpu: CpuId, cycle: u32, pc: u32) -> Self {
        Self {
            cpu,
            cycle,
            pc,
            kind: InstrKind::Plain,
            link_address: 0,
            writeback: None,
            store: None,
        }
    }

    /// Fixed 24-byte little-endian serialization used for golden files.
    pub fn to_bytes(&self) -> [u8; 24] {
        let mut b = [0u8; 24];
        b[0] = self.cpu;
        b[1] = match self.kind {
            InstrKind::Plain => 0,
            InstrKind::Call => 1,
            InstrKind::ReturnSite => 2,
            InstrKind::StoreWord => 3,
        };
        if let Some(wb) = self.writeback {
            b[2] = 0x80 | wb.reg;
            b[12..16].copy_from_slice(&wb.value.to_le_bytes());
        }
        if let Some(st) = self.store {
            b[3] = 0x80 | st.base_reg;
            b[16..18].copy_from_slice(&st.offset.to_le_bytes());
            b[20..24].copy_from_slice(&st.value.to_le_bytes());
        }
        b[4..8].copy_from_slice(&self.cycle.to_le_bytes());
        b[8..12].copy_from_slice(&self.pc.to_le_bytes());
        if self.kind == InstrKind::Call {
            b[18..20].copy_from_slice(&((self.link_address & 0xFFFF) as u16).to_le_bytes());
        }
        b
    }
}

/// Per-CPU instruction streams, indexed by CPU id.
pub type TraceStreams = Vec<Vec<TraceRecord>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadKind {
    BankAtm(BankAtmParams),
    LockBench(LockBenchParams),
    EventLogReplay { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub cpus: u8,
    /// Hard cap on simulated cycles.
    pub duration: u32,
    #[serde(flatten)]
    pub kind: WorkloadKind,
}

impl WorkloadSpec {
    /// Shipped parameter sets, addressable by name from the CLI.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "bank-atm-paper" => Some(bank_atm::tuned_preset()),
            "lock-bench-small" => Some(lock_bench::small_preset()),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &["bank-atm-paper", "lock-bench-small"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub owner: u32,
    pub get_cycle: u32,
    /// `None` when the run ended before the balance was written back.
    pub set_cycle: Option<u32>,
}

impl Transaction {
    fn end(&self) -> u64 {
        self.set_cycle.map_or(u64::MAX, u64::from)
    }

    pub fn overlaps(&self, other: &Transaction) -> bool {
        (self.get_cycle as u64) < other.end() && (other.get_cycle as u64) < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acquisition {
    pub cpu: CpuId,
    pub call_cycle: u32,
    pub return_cycle: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    BankAtm,
    LockBench,
}

/// Facts recorded by a generator while it emits the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: GroundTruthKind,
    /// Sorted by `get_cycle`.
    pub transactions: Vec<Transaction>,
    /// Index pairs `(i, j)`, `i < j`, into `transactions`.
    pub overlapping_pairs: Vec<(usize, usize)>,
    pub initial_balance: u32,
    pub final_balance: u32,
    /// Keyed by mutex address.
    pub acquisitions: BTreeMap<u64, Vec<Acquisition>>,
    pub n_instructions: u64,
    pub n_data_accesses: u64,
    /// One past the last simulated cycle.
    pub end_cycle: u32,
}

impl GroundTruth {
    fn new(kind: GroundTruthKind) -> Self {
        Self {
            kind,
            transactions: Vec::new(),
            overlapping_pairs: Vec::new(),
            initial_balance: 0,
            final_balance: 0,
            acquisitions: BTreeMap::new(),
            n_instructions: 0,
            n_data_accesses: 0,
            end_cycle: 0,
        }
    }

    /// Number of transactions that began while another owner's transaction
    /// was open.
    pub fn conflicting_arrivals(&self) -> usize {
        let mut open: BTreeMap<u32, u32> = BTreeMap::new();
        let mut closes: Vec<(u32, u32)> = self
            .transactions
            .iter()
            .filter_map(|t| t.set_cycle.map(|s| (s, t.owner)))
            .collect();
        closes.sort_unstable();
        let mut ci = 0;
        let mut count = 0;
        for t in &self.transactions {
            while ci < closes.len() && closes[ci].0 < t.get_cycle {
                let (_, owner) = closes[ci];
                if let Some(n) = open.get_mut(&owner) {
                    *n -= 1;
                    if *n == 0 {
                        open.remove(&owner);
                    }
                }
                ci += 1;
            }
            if open.keys().any(|o| *o != t.owner) {
                count += 1;
            }
            *open.entry(t.owner).or_insert(0) += 1;
        }
        count
    }

    pub fn total_acquisitions(&self) -> usize {
        self.acquisitions.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("operation needs a {expected} workload")]
    WrongWorkloadKind { expected: &'static str },
    #[error(transparent)]
    EventLog(#[from] EventLogError),
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub streams: TraceStreams,
    pub truth: GroundTruth,
}

/// Runs the synthetic observed system described by `spec`.
///
/// Trace generation is a pure function of `spec`. Replay specs carry no
/// instruction stream; use [`read_event_log`] for them.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    if spec.duration == 0 {
        return Err(WorkloadError::InvalidSpec("duration must be positive".into()));
    }
    if spec.cpus == 0 {
        return Err(WorkloadError::InvalidSpec("cpus must be positive".into()));
    }
    match &spec.kind {
        WorkloadKind::BankAtm(p) => bank_atm::generate(spec, p),
        WorkloadKind::LockBench(p) => lock_bench::generate(spec, p),
        WorkloadKind::EventLogReplay { .. } => Err(WorkloadError::InvalidSpec(
            "event_log_replay has no instruction trace".into(),
        )),
    }
}

/// Fraction of bank transactions that overlap at least one other transaction.
pub fn interleaved_fraction(gt: &GroundTruth) -> Result<f64, WorkloadError> {
    if gt.kind != GroundTruthKind::BankAtm {
        return Err(WorkloadError::WrongWorkloadKind { expected: "bank_atm" });
    }
    if gt.transactions.is_empty() {
        return Ok(0.0);
    }
    let mut part = vec![false; gt.transactions.len()];
    for &(i, j) in &gt.overlapping_pairs {
        part[i] = true;
        part[j] = true;
    }
    Ok(part.iter().filter(|p| **p).count() as f64 / gt.transactions.len() as f64)
}

/// Sweep over transactions sorted by start; pairs `(i, j)` with `i < j`.
fn overlapping_pairs(transactions: &[Transaction]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for (j, t) in transactions.iter().enumerate() {
        active.retain(|&i| transactions[i].end() > t.get_cycle as u64);
        for &i in &active {
            pairs.push((i, j));
        }
        active.push(j);
    }
    pairs
}

/// Drops everything at or beyond `limit` cycles.
fn truncate_streams(streams: &mut TraceStreams, limit: u32) {
    for s in streams.iter_mut() {
        let keep = s.partition_point(|r| r.cycle < limit);
        s.truncate(keep);
    }
}
