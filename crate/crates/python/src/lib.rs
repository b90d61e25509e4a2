// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Python bindings. Structured values cross the boundary as JSON text so the
//! Python side can `json.loads` them without a bespoke object model.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use diasys::cli::{self, CliError, CommonOpts, PolicyArg, ReportFormat, RunConfig};
use diasys::event_model::{self, EventTypeRegistry};
use diasys::workloads::event_log::{format_line, parse_line};
use diasys::workloads::{self as wl, LogEntry, WorkloadSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Validation(m) => PyValueError::new_err(m),
        CliError::Runtime(m) => PyRuntimeError::new_err(m),
    }
}

/// Synthetic observed-system trace plus its ground truth.
#[pyclass(frozen, name = "Workload", module = "diasys")]
struct PyWorkload {
    spec: WorkloadSpec,
    inner: wl::Workload,
}

#[pymethods]
impl PyWorkload {
    /// Generates a shipped preset, optionally with a different seed or
    /// duration.
    #[staticmethod]
    #[pyo3(signature = (name, seed=None, duration=None))]
    fn preset(name: &str, seed: Option<u64>, duration: Option<u32>) -> PyResult<Self> {
        let mut spec = WorkloadSpec::preset(name).ok_or_else(|| {
            value_err(format!(
                "unknown preset {name:?}; known: {}",
                WorkloadSpec::PRESETS.join(", ")
            ))
        })?;
        if let Some(s) = seed {
            spec.seed = s;
        }
        if let Some(d) = duration {
            spec.duration = d;
        }
        Self::build(spec)
    }

    /// Generates from a JSON workload spec.
    #[staticmethod]
    fn from_json(spec: &str) -> PyResult<Self> {
        Self::build(serde_json::from_str(spec).map_err(value_err)?)
    }

    #[getter]
    fn spec_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("spec serializes")
    }

    #[getter]
    fn cpus(&self) -> u8 {
        self.spec.cpus
    }

    /// Number of trace records per CPU.
    #[getter]
    fn records_per_cpu(&self) -> Vec<usize> {
        self.inner.streams.iter().map(Vec::len).collect()
    }

    #[getter]
    fn n_instructions(&self) -> u64 {
        self.inner.truth.n_instructions
    }

    #[getter]
    fn n_data_accesses(&self) -> u64 {
        self.inner.truth.n_data_accesses
    }

    #[getter]
    fn end_cycle(&self) -> u32 {
        self.inner.truth.end_cycle
    }

    fn truth_json(&self) -> String {
        serde_json::to_string(&self.inner.truth).expect("truth serializes")
    }

    /// Raises `ValueError` for workloads other than bank-ATM.
    fn interleaved_fraction(&self) -> PyResult<f64> {
        wl::interleaved_fraction(&self.inner.truth).map_err(value_err)
    }

    fn conflicting_arrivals(&self) -> usize {
        self.inner.truth.conflicting_arrivals()
    }

    /// Conventional full-trace size estimate in bits.
    fn full_trace_estimate_bits(&self) -> u64 {
        let t = &self.inner.truth;
        diasys::platform::estimate_full_trace(t.n_instructions, t.n_data_accesses)
    }

    fn __repr__(&self) -> String {
        format!(
            "Workload(seed={}, cpus={}, end_cycle={})",
            self.spec.seed, self.spec.cpus, self.inner.truth.end_cycle
        )
    }
}

impl PyWorkload {
    fn build(spec: WorkloadSpec) -> PyResult<Self> {
        let inner = wl::generate_workload(&spec).map_err(value_err)?;
        Ok(Self { spec, inner })
    }
}

/// Outcome of a configured run.
#[pyclass(frozen, name = "RunResult", module = "diasys")]
struct PyRunResult {
    #[pyo3(get)]
    report_json: String,
    #[pyo3(get)]
    text: String,
    #[pyo3(get)]
    primary_events: u64,
    #[pyo3(get)]
    duration_cycles: u64,
    #[pyo3(get)]
    deterministic: bool,
    #[pyo3(get)]
    runtime_fault: bool,
    cuts: BTreeMap<String, (u64, u64, f64)>,
    ratios: BTreeMap<String, Option<f64>>,
    sinks: BTreeMap<String, String>,
}

#[pymethods]
impl PyRunResult {
    /// `(events, bytes, bits_per_second)` of a cut.
    fn cut(&self, name: &str) -> PyResult<(u64, u64, f64)> {
        self.cuts
            .get(name)
            .copied()
            .ok_or_else(|| value_err(format!("no cut named {name:?}")))
    }

    fn cut_names(&self) -> Vec<String> {
        self.cuts.keys().cloned().collect()
    }

    /// `None` when the ratio is undefined.
    fn ratio(&self, name: &str) -> PyResult<Option<f64>> {
        self.ratios
            .get(name)
            .copied()
            .ok_or_else(|| value_err(format!("no ratio named {name:?}")))
    }

    /// Rendered sink contents, keyed by sink name.
    fn sink_outputs(&self) -> BTreeMap<String, String> {
        self.sinks.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(primary_events={}, duration_cycles={})",
            self.primary_events, self.duration_cycles
        )
    }
}

/// Runs a TOML run configuration end to end.
///
/// Validation problems raise `ValueError`. Faults and blocked producers do
/// not raise; they show up as `runtime_fault`.
#[pyfunction]
#[pyo3(signature = (config, seed=None, policy=None, clock_hz=None))]
fn run_config(
    py: Python<'_>,
    config: &str,
    seed: Option<u64>,
    policy: Option<&str>,
    clock_hz: Option<u64>,
) -> PyResult<PyRunResult> {
    let cfg = RunConfig::from_toml(config).map_err(cli_err)?;
    let policy = match policy {
        None => None,
        Some("stall") => Some(PolicyArg::Stall),
        Some("discard") => Some(PolicyArg::Discard),
        Some(p) => return Err(value_err(format!("unknown policy {p:?}"))),
    };
    let opts = CommonOpts {
        report: ReportFormat::Text,
        policy,
        clock_hz,
        out_dir: None,
    };
    let (exec, text) = py
        .detach(|| cli::run_config(&cfg, seed, &opts))
        .map_err(cli_err)?;
    let r = &exec.report;
    Ok(PyRunResult {
        report_json: serde_json::to_string(r).map_err(value_err)?,
        text,
        primary_events: r.primary_events,
        duration_cycles: r.duration_cycles,
        deterministic: r.determinism.is_deterministic(),
        runtime_fault: r.has_runtime_fault(),
        cuts: r
            .bandwidth
            .cuts
            .iter()
            .map(|c| (c.name.clone(), (c.events, c.bytes, c.bps)))
            .collect(),
        ratios: r
            .bandwidth
            .ratios
            .iter()
            .map(|x| (x.name.clone(), x.value))
            .collect(),
        sinks: r.sink_output.clone(),
    })
}

/// Encodes one event given as a JSON log line into its wire bytes.
#[pyfunction]
fn encode_event<'py>(py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyBytes>> {
    let types = EventTypeRegistry::builtin();
    let entry = parse_line(&types, line, 1).map_err(value_err)?;
    let bytes = event_model::encode_event(&types, &entry.event).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes wire bytes back into a JSON log line.
#[pyfunction]
#[pyo3(signature = (data, cpu=0))]
fn decode_event(data: &[u8], cpu: u8) -> PyResult<String> {
    let types = EventTypeRegistry::builtin();
    let event = event_model::decode_event(&types, data).map_err(value_err)?;
    format_line(&types, &LogEntry { cpu, event }).map_err(value_err)
}

/// Built-in event types as `(id, name, has_timestamp, fixed_size)`.
#[pyfunction]
fn event_types() -> Vec<(u16, String, bool, usize)> {
    EventTypeRegistry::builtin()
        .iter()
        .map(|(id, s)| (id.0, s.name.clone(), s.timestamp, s.fixed_size()))
        .collect()
}

#[pyfunction]
fn estimate_full_trace(n_instructions: u64, n_data_accesses: u64) -> u64 {
    diasys::platform::estimate_full_trace(n_instructions, n_data_accesses)
}

/// 16-bit key the lock profiler uses for a mutex address.
#[pyfunction]
fn hash16(mutex: u64) -> u16 {
    diasys::apps::hash16(mutex)
}

#[pyfunction]
fn mbit_per_s(bps: f64) -> f64 {
    diasys::metering::mbit_per_s(bps)
}

#[pymodule]
#[pyo3(name = "diasys")]
fn diasys_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorkload>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(encode_event, m)?)?;
    m.add_function(wrap_pyfunction!(decode_event, m)?)?;
    m.add_function(wrap_pyfunction!(event_types, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_full_trace, m)?)?;
    m.add_function(wrap_pyfunction!(hash16, m)?)?;
    m.add_function(wrap_pyfunction!(mbit_per_s, m)?)?;
    m.add("DEFAULT_CLOCK_HZ", diasys::metering::DEFAULT_CLOCK_HZ)?;
    m.add("PRESETS", WorkloadSpec::PRESETS.to_vec())?;
    Ok(())
}
