// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Instruction emitter shared by the workload generators.

use super::{
    CpuId, InstrKind, StoreWord, TraceRecord, Writeback, REG_LINK, REG_SP,
};

/// Records instructions retired by one simulated CPU, one per cycle.
#[derive(Debug)]
pub(crate) struct Cpu {
    pub id: CpuId,
    /// Cycle at which the next instruction retires.
    pub cycle: u32,
    pub records: Vec<TraceRecord>,
    access_cycles: Vec<u32>,
    pub sp: u32,
}

impl Cpu {
    pub fn new(id: CpuId, sp: u32) -> Self {
        Self {
            id,
            cycle: 0,
            records: Vec::new(),
            access_cycles: Vec::new(),
            sp,
        }
    }

    fn push(&mut self, mut rec: TraceRecord) -> u32 {
        let at = self.cycle;
        rec.cycle = at;
        self.records.push(rec);
        self.cycle = self.cycle.saturating_add(1);
        at
    }

    pub fn nop(&mut self, pc: u32) -> u32 {
        self.push(TraceRecord::plain(self.id, 0, pc))
    }

    pub fn alu(&mut self, pc: u32, reg: u8, value: u32) -> u32 {
        let mut r = TraceRecord::plain(self.id, 0, pc);
        r.writeback = Some(Writeback { reg, value });
        self.push(r)
    }

    pub fn load(&mut self, pc: u32, reg: u8, value: u32) -> u32 {
        self.access_cycles.push(self.cycle);
        self.alu(pc, reg, value)
    }

    pub fn store(&mut self, pc: u32, base_reg: u8, offset: i16, value: u32) -> u32 {
        self.access_cycles.push(self.cycle);
        let mut r = TraceRecord::plain(self.id, 0, pc);
        r.kind = InstrKind::StoreWord;
        r.store = Some(StoreWord {
            base_reg,
            offset,
            value,
        });
        self.push(r)
    }

    /// `l.jal entry` at `site` plus its delay slot, then the callee's first
    /// instruction. Returns `(link, entry_cycle)`.
    pub fn call(&mut self, site: u32, entry: u32) -> (u32, u32) {
        let link = site + 8;
        self.alu(site, REG_LINK, link);
        self.nop(site + 4);
        let mut r = TraceRecord::plain(self.id, 0, entry);
        r.kind = InstrKind::Call;
        r.link_address = link;
        let at = self.push(r);
        (link, at)
    }

    /// Function prologue: open a 16-byte frame and save the link register
    /// below it.
    pub fn prologue(&mut self, pc: u32, link: u32) {
        self.store(pc, REG_SP, -4, link);
        self.sp -= 16;
        self.alu(pc + 4, REG_SP, self.sp);
    }

    pub fn epilogue(&mut self, pc: u32) {
        self.sp += 16;
        self.alu(pc, REG_SP, self.sp);
    }

    /// `l.jr r9` plus delay slot, then the caller's resume instruction.
    /// Returns the cycle of the resume instruction.
    pub fn ret(&mut self, pc: u32, link: u32) -> u32 {
        self.nop(pc);
        self.nop(pc + 4);
        let mut r = TraceRecord::plain(self.id, 0, link);
        r.kind = InstrKind::ReturnSite;
        self.push(r)
    }

    /// Data memory accesses (loads and stores) retired before `limit`.
    pub fn accesses_before(&self, limit: u32) -> u64 {
        self.access_cycles.partition_point(|c| *c < limit) as u64
    }

    /// Busy-waits in a three-instruction counting loop until `until`.
    pub fn spin_until(&mut self, loop_pc: u32, until: u32) {
        let mut i = 0u32;
        while self.cycle < until {
            i = i.wrapping_add(1);
            self.alu(loop_pc, 13, i);
            self.nop(loop_pc + 4);
            self.nop(loop_pc + 8);
        }
    }
}
