// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Traffic counters per cut and the rates derived from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clock of the FPGA prototype.
pub const DEFAULT_CLOCK_HZ: u64 = 50_000_000;

/// Pseudo-cut name that refers to the conventional full-trace estimate in
/// ratio specifications.
pub const FULL_TRACE: &str = "full_trace_estimate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutCounters {
    pub name: String,
    pub events: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub name: String,
    pub numerator: String,
    pub denominator: String,
}

impl RatioSpec {
    pub fn new(name: &str, numerator: &str, denominator: &str) -> Self {
        Self {
            name: name.into(),
            numerator: numerator.into(),
            denominator: denominator.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRate {
    pub name: String,
    pub events: u64,
    pub bytes: u64,
    pub bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub name: String,
    /// `None` when the denominator is zero or unknown.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub cuts: Vec<CutRate>,
    pub ratios: Vec<Ratio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_trace_estimate_bits: Option<u64>,
    #[serde(skip)]
    pub duration_cycles: u64,
    #[serde(skip)]
    pub clock_hz: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeteringError {
    #[error("simulated duration is zero")]
    ZeroDuration,
    #[error("clock frequency is zero")]
    ZeroClock,
}

/// Rates over `duration_cycles` at `clock_hz`, plus the requested ratios.
///
/// Ratios compare bits: a cut contributes `8 * bytes`, the pseudo-cut
/// [`FULL_TRACE`] contributes `estimate_bits`.
pub fn compute_rates(
    counters: &[CutCounters],
    duration_cycles: u64,
    clock_hz: u64,
    ratios: &[RatioSpec],
    estimate_bits: Option<u64>,
) -> Result<BandwidthReport, MeteringError> {
    if duration_cycles == 0 {
        return Err(MeteringError::ZeroDuration);
    }
    if clock_hz == 0 {
        return Err(MeteringError::ZeroClock);
    }
    let seconds = duration_cycles as f64 / clock_hz as f64;
    let cuts = counters
        .iter()
        .map(|c| CutRate {
            name: c.name.clone(),
            events: c.events,
            bytes: c.bytes,
            bps: c.bytes as f64 * 8.0 / seconds,
        })
        .collect();
    let bits = |name: &str| -> Option<u64> {
        if name == FULL_TRACE {
            return estimate_bits;
        }
        counters.iter().find(|c| c.name == name).map(|c| c.bytes * 8)
    };
    let ratios = ratios
        .iter()
        .map(|r| Ratio {
            name: r.name.clone(),
            value: match (bits(&r.numerator), bits(&r.denominator)) {
                (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
                _ => None,
            },
        })
        .collect();
    Ok(BandwidthReport {
        cuts,
        ratios,
        full_trace_estimate_bits: estimate_bits,
        duration_cycles,
        clock_hz,
    })
}

/// Megabits per second with a binary mega (2^20), as used for the
/// prototype's published figures.
pub fn mbit_per_s(bps: f64) -> f64 {
    bps / (1u64 << 20) as f64
}

impl BandwidthReport {
    pub fn cut(&self, name: &str) -> Option<&CutRate> {
        self.cuts.iter().find(|c| c.name == name)
    }

    pub fn ratio(&self, name: &str) -> Option<f64> {
        self.ratios.iter().find(|r| r.name == name)?.value
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let secs = self.duration_cycles as f64 / self.clock_hz.max(1) as f64;
        let _ = writeln!(
            s,
            "bandwidth over {} cycles ({secs:.6} s at {} Hz)",
            self.duration_cycles, self.clock_hz
        );
        let _ = writeln!(
            s,
            "{:<24}{:>12}{:>14}{:>16}{:>12}",
            "cut", "events", "bytes", "bit/s", "Mbit/s"
        );
        for c in &self.cuts {
            let _ = writeln!(
                s,
                "{:<24}{:>12}{:>14}{:>16.1}{:>12.3}",
                c.name,
                c.events,
                c.bytes,
                c.bps,
                mbit_per_s(c.bps)
            );
        }
        if let Some(bits) = self.full_trace_estimate_bits {
            let bps = bits as f64 / secs.max(f64::MIN_POSITIVE);
            let _ = writeln!(
                s,
                "estimated upper-bound conventional trace: {bits} bits ({bps:.1} bit/s)"
            );
        }
        for r in &self.ratios {
            match r.value {
                Some(v) => {
                    let _ = writeln!(s, "ratio {}: {v:.4}", r.name);
                }
                None => {
                    let _ = writeln!(s, "ratio {}: undefined", r.name);
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cut(name: &str, events: u64, bytes: u64) -> CutCounters {
        CutCounters {
            name: name.into(),
            events,
            bytes,
        }
    }

    #[test]
    fn rate_formula() {
        let r = compute_rates(&[cut("a", 1, 100)], 50_000_000, DEFAULT_CLOCK_HZ, &[], None).unwrap();
        assert_eq!(r.cuts[0].bps, 800.0);
    }

    #[test]
    fn prototype_scale_rate() {
        // 2.68 s at 50 MHz
        let r = compute_rates(
            &[cut("pre", 516_254, 5_162_540), cut("post", 258_127, 1_548_762)],
            134_000_000,
            DEFAULT_CLOCK_HZ,
            &[RatioSpec::new("post/pre", "post", "pre")],
            None,
        )
        .unwrap();
        let mbit = mbit_per_s(r.cuts[0].bps);
        assert!((mbit - 14.7).abs() < 0.05, "{mbit}");
        assert!((mbit_per_s(r.cuts[1].bps) - 4.4).abs() < 0.05);
        assert_eq!(r.ratio("post/pre"), Some(0.3));
    }

    #[test]
    fn zero_duration_and_clock() {
        assert_eq!(
            compute_rates(&[], 0, 1, &[], None),
            Err(MeteringError::ZeroDuration)
        );
        assert_eq!(compute_rates(&[], 1, 0, &[], None), Err(MeteringError::ZeroClock));
    }

    #[test]
    fn empty_cut_ratio_undefined() {
        let r = compute_rates(
            &[cut("a", 0, 0), cut("b", 0, 0)],
            10,
            10,
            &[RatioSpec::new("a/b", "a", "b"), RatioSpec::new("x", "a", "missing")],
            None,
        )
        .unwrap();
        assert_eq!(r.cuts[0].bps, 0.0);
        assert_eq!(r.ratio("a/b"), None);
        assert_eq!(r.ratio("x"), None);
    }

    #[test]
    fn estimate_pseudo_cut() {
        let r = compute_rates(
            &[cut("offchip", 1, 6)],
            10,
            10,
            &[RatioSpec::new("est/offchip", FULL_TRACE, "offchip")],
            Some(4800),
        )
        .unwrap();
        assert_eq!(r.ratio("est/offchip"), Some(100.0));
    }

    #[test]
    fn json_shape() {
        let r = compute_rates(
            &[cut("offchip", 2, 12)],
            100,
            100,
            &[RatioSpec::new("r", "offchip", "offchip")],
            Some(7),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["cuts"][0]["name"], "offchip");
        assert_eq!(v["cuts"][0]["bytes"], 12);
        assert_eq!(v["cuts"][0]["bps"], 96.0);
        assert_eq!(v["ratios"][0]["value"], 1.0);
        assert_eq!(v["full_trace_estimate_bits"], 7);
        assert!(r.to_text().contains("offchip"));
    }
}
