// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! The `diasys` command line: run configurations end to end and replay
//! recorded primary-event logs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{
    behavior_registry, format_event_log, format_profile_table, hash16, lock_profile_app,
    message_log_app, profile_rows, race_check_app, AppPreset, DEFAULT_TOP_N,
};
use crate::dataflow::{classify_determinism, ActorGraph, Application, Determinism, SourceKind};
use crate::event_gen::{GeneratorConfig, GeneratorStats, TriggerCondition};
use crate::event_model::EventTypeRegistry;
use crate::metering::{compute_rates, BandwidthReport, RatioSpec, FULL_TRACE};
use crate::platform::{
    estimate_full_trace, execute, map_actors, primary_events, CutSpec, ExecOutput, Mapping,
    NodeSpec, OverloadPolicy, PlatformConfig, TimedInputs, OFFCHIP_CUT,
};
use crate::workloads::{
    generate_workload, interleaved_fraction, read_event_log, write_event_log, CpuId,
    GroundTruthKind, LogEntry, WorkloadSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

/// File written next to the reports; replayable with `diasys replay`.
pub const PRIMARY_EVENTS_FILE: &str = "primary_events.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn joined<E: std::fmt::Display>(errs: &[E]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSection {
    Preset {
        preset: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<u32>,
    },
    Spec(WorkloadSpec),
}

impl WorkloadSection {
    pub fn resolve(&self) -> Result<WorkloadSpec, CliError> {
        match self {
            WorkloadSection::Spec(s) => Ok(s.clone()),
            WorkloadSection::Preset {
                preset,
                seed,
                duration,
            } => {
                let mut spec = WorkloadSpec::preset(preset).ok_or_else(|| {
                    invalid(format!(
                        "unknown workload preset {preset:?} (known: {})",
                        WorkloadSpec::PRESETS.join(", ")
                    ))
                })?;
                if let Some(s) = seed {
                    spec.seed = *s;
                }
                if let Some(d) = duration {
                    spec.duration = *d;
                }
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum AppSection {
    RaceCheck {
        #[serde(default)]
        bank_cpu: CpuId,
    },
    MessageLog {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cpus: Option<Vec<CpuId>>,
    },
    LockProfile {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cpus: Option<Vec<CpuId>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flush_period: Option<u32>,
    },
    /// Hand-written graph; trigger lists are keyed by CPU number.
    Custom {
        graph: ActorGraph,
        #[serde(default)]
        triggers: BTreeMap<String, Vec<TriggerCondition>>,
    },
}

impl AppSection {
    /// `cpus` is the CPU count of the observed system.
    pub fn resolve(&self, cpus: u8) -> Result<AppPreset, CliError> {
        let all: Vec<CpuId> = (0..cpus).collect();
        Ok(match self {
            AppSection::RaceCheck { bank_cpu } => race_check_app(*bank_cpu),
            AppSection::MessageLog { cpus } => message_log_app(cpus.as_deref().unwrap_or(&all)),
            AppSection::LockProfile { cpus, flush_period } => {
                lock_profile_app(cpus.as_deref().unwrap_or(&all), *flush_period)
            }
            AppSection::Custom { graph, triggers } => {
                let mut t = BTreeMap::new();
                for (k, v) in triggers {
                    let cpu: CpuId = k
                        .parse()
                        .map_err(|_| invalid(format!("trigger key {k:?} is not a CPU number")))?;
                    t.insert(cpu, v.clone());
                }
                AppPreset {
                    triggers: t,
                    graph: graph.clone(),
                }
            }
        })
    }
}

fn default_host() -> String {
    "host".into()
}

/// Platform section. Node ids and mapping entries may contain `{cpu}`,
/// which expands once per generator CPU of the application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformSection {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub mapping: Mapping,
    /// Node that receives every actor the mapping leaves out.
    #[serde(default = "default_host")]
    pub default_node: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cuts: Vec<CutSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_bandwidth_bps: Option<u64>,
    #[serde(default)]
    pub policy: OverloadPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_hz: Option<u64>,
}

impl Default for PlatformSection {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            mapping: Mapping::new(),
            default_node: default_host(),
            cuts: Vec::new(),
            link_bandwidth_bps: None,
            policy: OverloadPolicy::Stall,
            clock_hz: None,
        }
    }
}

const CPU_PLACEHOLDER: &str = "{cpu}";

impl PlatformSection {
    pub fn resolve(&self, graph: &ActorGraph) -> PlatformConfig {
        let cpus: Vec<CpuId> = graph
            .sources
            .iter()
            .filter_map(|s| match s.kind {
                SourceKind::Generator { cpu } => Some(cpu),
                SourceKind::Flush { .. } => None,
            })
            .collect();
        let expand = |s: &str| -> Vec<(Option<CpuId>, String)> {
            if s.contains(CPU_PLACEHOLDER) {
                cpus.iter()
                    .map(|c| (Some(*c), s.replace(CPU_PLACEHOLDER, &c.to_string())))
                    .collect()
            } else {
                vec![(None, s.to_string())]
            }
        };
        let mut nodes = Vec::new();
        for n in &self.nodes {
            for (_, id) in expand(&n.id) {
                nodes.push(NodeSpec { id, ..n.clone() });
            }
        }
        if !nodes.iter().any(|n| n.id == self.default_node) {
            nodes.push(NodeSpec::host(&self.default_node));
        }
        let mut mapping = Mapping::new();
        for (actor, node) in &self.mapping {
            for (cpu, a) in expand(actor) {
                let n = match cpu {
                    Some(c) => node.replace(CPU_PLACEHOLDER, &c.to_string()),
                    None => node.clone(),
                };
                mapping.insert(a, n);
            }
        }
        for a in &graph.actors {
            mapping
                .entry(a.name.clone())
                .or_insert_with(|| self.default_node.clone());
        }
        let mut cfg = PlatformConfig::new(nodes, mapping);
        cfg.cuts = self.cuts.clone();
        cfg.link_bandwidth_bps = self.link_bandwidth_bps;
        cfg.policy = self.policy;
        if let Some(c) = self.clock_hz {
            cfg.clock_hz = c;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeteringSection {
    #[serde(default)]
    pub ratios: Vec<RatioSpec>,
}

/// Everything `diasys run` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workload: WorkloadSection,
    pub app: AppSection,
    #[serde(default)]
    pub platform: PlatformSection,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub metering: MeteringSection,
}

/// `diasys replay` takes the application half of a run configuration; a
/// `[workload]` table, if present, only supplies the CPU count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSection>,
    pub app: AppSection,
    #[serde(default)]
    pub platform: PlatformSection,
    #[serde(default)]
    pub metering: MeteringSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(invalid)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Stall,
    Discard,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonOpts {
    #[arg(long, value_enum, default_value = "text")]
    pub report: ReportFormat,
    /// Overrides the overload policy of the configuration.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub clock_hz: Option<u64>,
    /// Directory for sink outputs and the primary-event log.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a workload and run a diagnosis application over it.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Feed a recorded primary-event log into an application.
    Replay {
        log: PathBuf,
        graph_config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

#[derive(Debug, Parser)]
#[command(name = "diasys", version, about = "Diagnosis-application simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Machine-readable summary of one execution.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub primary_events: u64,
    pub duration_cycles: u64,
    pub bandwidth: BandwidthReport,
    pub determinism: Determinism,
    pub sink_events: BTreeMap<String, usize>,
    pub nodes: Vec<crate::platform::NodeStats>,
    pub stall_cycles: BTreeMap<String, u64>,
    pub faults: BTreeMap<String, u64>,
    pub no_progress: Vec<crate::dataflow::NoProgress>,
    pub blocked: Vec<String>,
    pub diagnostics: BTreeMap<String, Vec<(String, u64)>>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub generators: BTreeMap<CpuId, GeneratorStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interleaved_fraction: Option<f64>,
    /// Rendered sink contents, as written to `<sink>.txt`.
    pub sink_output: BTreeMap<String, String>,
}

impl RunReport {
    pub fn has_runtime_fault(&self) -> bool {
        self.faults.values().any(|&f| f > 0) || !self.blocked.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("primary events: {}\n", self.primary_events);
        s += &self.bandwidth.to_text();
        s += match &self.determinism {
            Determinism::Deterministic => "determinism: deterministic\n".to_string(),
            Determinism::Nondeterministic(r) => format!(
                "determinism: nondeterministic ({})\n",
                r.iter()
                    .map(|x| format!("{}: {:?}", x.node, x.cause))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        }
        .as_str();
        for (name, n) in &self.sink_events {
            s += &format!("sink {name}: {n} events\n");
        }
        for n in &self.nodes {
            s += &format!(
                "node {}: offered {} processed {} discarded {} firings {} busy {} max queue {}\n",
                n.id, n.offered, n.processed, n.discarded, n.firings, n.busy_cycles, n.max_queue
            );
        }
        let stall: u64 = self.stall_cycles.values().sum();
        if stall > 0 {
            s += &format!("stall cycles: {stall}\n");
        }
        for (a, f) in self.faults.iter().filter(|(_, f)| **f > 0) {
            s += &format!("actor {a}: {f} faults\n");
        }
        for p in &self.no_progress {
            s += &format!("no progress: {} holds {:?}\n", p.actor, p.pending);
        }
        if !self.blocked.is_empty() {
            s += &format!("blocked producers: {}\n", self.blocked.join(", "));
        }
        if let Some(f) = self.interleaved_fraction {
            s += &format!("interleaved fraction (ground truth): {f:.4}\n");
        }
        s
    }
}

/// Outcome of [`execute_app`].
#[derive(Debug, Clone)]
pub struct Execution {
    pub output: ExecOutput,
    pub report: RunReport,
    pub entries: Vec<LogEntry>,
}

pub struct ExecParams<'a> {
    pub preset: &'a AppPreset,
    pub inputs: TimedInputs,
    pub platform: PlatformConfig,
    pub ratios: &'a [RatioSpec],
    pub duration_cycles: u64,
    pub estimate_bits: Option<u64>,
}

fn default_ratios() -> Vec<RatioSpec> {
    vec![RatioSpec::new("full_trace/offchip", FULL_TRACE, OFFCHIP_CUT)]
}

/// Deploys and runs an application over prepared primary events.
pub fn execute_app(p: ExecParams<'_>) -> Result<Execution, CliError> {
    let types = EventTypeRegistry::builtin();
    let mut app = Application::new(&p.preset.graph, &types, &behavior_registry())
        .map_err(|e| invalid(joined(&e)))?;
    let dep = map_actors(&app, &p.platform).map_err(|e| invalid(joined(&e)))?;
    let determinism = classify_determinism(app.graph(), app.topology());
    let out = execute(&mut app, &dep, &p.inputs);

    let mut ratios = p.ratios.to_vec();
    if ratios.is_empty() && p.estimate_bits.is_some() {
        ratios = default_ratios();
    }
    let bandwidth = compute_rates(
        &out.cuts,
        p.duration_cycles.max(1),
        p.platform.clock_hz,
        &ratios,
        p.estimate_bits,
    )
    .map_err(invalid)?;

    let mut entries = Vec::new();
    for s in &p.preset.graph.sources {
        if let SourceKind::Generator { cpu } = s.kind {
            for (_, e) in p.inputs.get(&s.name).into_iter().flatten() {
                entries.push(LogEntry {
                    cpu,
                    event: e.clone(),
                });
            }
        }
    }
    let report = RunReport {
        primary_events: entries.len() as u64,
        duration_cycles: p.duration_cycles,
        bandwidth,
        determinism,
        sink_events: out.sinks.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        nodes: out.nodes.clone(),
        stall_cycles: out.stall_cycles.clone(),
        faults: app
            .graph()
            .actors
            .iter()
            .zip(&out.faults)
            .map(|(a, f)| (a.name.clone(), *f))
            .collect(),
        no_progress: out.no_progress.clone(),
        blocked: out.blocked.clone(),
        diagnostics: out.actor_diagnostics.clone(),
        generators: BTreeMap::new(),
        interleaved_fraction: None,
        sink_output: BTreeMap::new(),
    };
    Ok(Execution {
        output: out,
        report,
        entries,
    })
}

/// Rendered output of each sink, keyed by sink name.
pub fn render_sinks(
    graph: &ActorGraph,
    out: &ExecOutput,
    labels: Option<&BTreeMap<u16, u64>>,
) -> BTreeMap<String, String> {
    let types = EventTypeRegistry::builtin();
    let mut rendered = BTreeMap::new();
    for sink in &graph.sinks {
        let records = &out.sinks[&sink.name];
        let events: Vec<_> = records.iter().map(|r| r.event.clone()).collect();
        let text = match sink.kind.as_str() {
            "profile_table" => events
                .iter()
                .rev()
                .find_map(profile_rows)
                .map(|rows| format_profile_table(&rows, DEFAULT_TOP_N, labels))
                .unwrap_or_default(),
            _ => format_event_log(&types, &events),
        };
        rendered.insert(sink.name.clone(), text);
    }
    rendered
}

fn apply_opts(platform: &mut PlatformConfig, opts: &CommonOpts) {
    match opts.policy {
        Some(PolicyArg::Stall) => platform.policy = OverloadPolicy::Stall,
        Some(PolicyArg::Discard) => platform.policy = OverloadPolicy::Discard,
        None => {}
    }
    if let Some(c) = opts.clock_hz {
        platform.clock_hz = c;
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_outputs(
    dir: &Path,
    exec: &Execution,
    log_primary: bool,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(runtime)?;
    for (name, text) in &exec.report.sink_output {
        fs::write(dir.join(format!("{name}.txt")), text).map_err(runtime)?;
    }
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&exec.report).expect("report serializes"),
    )
    .map_err(runtime)?;
    if log_primary {
        write_event_log(
            &EventTypeRegistry::builtin(),
            &exec.entries,
            dir.join(PRIMARY_EVENTS_FILE),
        )
        .map_err(runtime)?;
    }
    Ok(())
}

/// `diasys run`: returns the execution and the rendered report.
pub fn run_config(
    config: &RunConfig,
    seed: Option<u64>,
    opts: &CommonOpts,
) -> Result<(Execution, String), CliError> {
    let mut spec = config.workload.resolve()?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let workload = generate_workload(&spec).map_err(invalid)?;
    let preset = config.app.resolve(spec.cpus)?;
    let types = EventTypeRegistry::builtin();
    let (inputs, gen_stats) = primary_events(
        &preset.graph,
        &preset.triggers,
        &workload.streams,
        &types,
        &config.generator,
    )
    .map_err(invalid)?;
    let mut platform = config.platform.resolve(&preset.graph);
    apply_opts(&mut platform, opts);
    let truth = &workload.truth;
    let mut exec = execute_app(ExecParams {
        preset: &preset,
        inputs,
        platform,
        ratios: &config.metering.ratios,
        duration_cycles: truth.end_cycle as u64,
        estimate_bits: Some(estimate_full_trace(truth.n_instructions, truth.n_data_accesses)),
    })?;
    exec.report.generators = gen_stats;
    if truth.kind == GroundTruthKind::BankAtm {
        exec.report.interleaved_fraction = interleaved_fraction(truth).ok();
    }
    let labels: BTreeMap<u16, u64> = truth
        .acquisitions
        .keys()
        .map(|&addr| (hash16(addr), addr))
        .collect();
    exec.report.sink_output = render_sinks(&preset.graph, &exec.output, Some(&labels));
    if let Some(dir) = &opts.out_dir {
        write_outputs(dir, &exec, true)?;
    }
    let rendered = render(&exec, opts.report);
    Ok((exec, rendered))
}

/// Primary events of a log, grouped onto the generator sources of `graph`.
///
/// Events keep their cycle from the timestamp; untimed events inherit the
/// cycle of their predecessor on the same CPU.
pub fn inputs_from_log(graph: &ActorGraph, entries: &[LogEntry]) -> TimedInputs {
    let mut by_cpu: BTreeMap<CpuId, Vec<(u32, crate::event_model::Event)>> = BTreeMap::new();
    for e in entries {
        let v = by_cpu.entry(e.cpu).or_default();
        let cycle = e.event.ts.unwrap_or_else(|| v.last().map_or(0, |x| x.0));
        v.push((cycle, e.event.clone()));
    }
    let mut inputs = TimedInputs::new();
    for s in &graph.sources {
        if let SourceKind::Generator { cpu } = s.kind {
            inputs.insert(s.name.clone(), by_cpu.get(&cpu).cloned().unwrap_or_default());
        }
    }
    inputs
}

/// `diasys replay`.
pub fn replay(log: &Path, config: &GraphConfig, opts: &CommonOpts) -> Result<(Execution, String), CliError> {
    let types = EventTypeRegistry::builtin();
    let entries = read_event_log(&types, log).map_err(invalid)?;
    let cpus = match &config.workload {
        Some(w) => w.resolve()?.cpus,
        None => entries.iter().map(|e| e.cpu + 1).max().unwrap_or(1),
    };
    let preset = config.app.resolve(cpus)?;
    let inputs = inputs_from_log(&preset.graph, &entries);
    let duration = inputs
        .values()
        .flatten()
        .map(|(c, _)| *c as u64 + 1)
        .max()
        .unwrap_or(1);
    let mut platform = config.platform.resolve(&preset.graph);
    apply_opts(&mut platform, opts);
    let mut exec = execute_app(ExecParams {
        preset: &preset,
        inputs,
        platform,
        ratios: &config.metering.ratios,
        duration_cycles: duration,
        estimate_bits: None,
    })?;
    exec.report.sink_output = render_sinks(&preset.graph, &exec.output, None);
    if let Some(dir) = &opts.out_dir {
        write_outputs(dir, &exec, false)?;
    }
    let rendered = render(&exec, opts.report);
    Ok((exec, rendered))
}

fn render(exec: &Execution, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(&exec.report).expect("report serializes") + "\n",
        ReportFormat::Text => {
            let mut s = exec.report.to_text();
            for (name, text) in &exec.report.sink_output {
                if !text.is_empty() {
                    s += &format!("--- {name}\n{text}");
                }
            }
            s
        }
    }
}

/// Parses `args` (including the program name), runs, prints and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run { config, seed, opts } => read_text(config)
            .and_then(|t| RunConfig::from_toml(&t))
            .and_then(|c| run_config(&c, *seed, opts)),
        Command::Replay {
            log,
            graph_config,
            opts,
        } => read_text(graph_config)
            .and_then(|t| toml::from_str::<GraphConfig>(&t).map_err(invalid))
            .and_then(|c| replay(log, &c, opts)),
    };
    match result {
        Ok((exec, text)) => {
            // a closed stdout is not a failure of the run
            let _ = std::io::stdout().write_all(text.as_bytes());
            if exec.report.has_runtime_fault() {
                log::error!("run finished with actor faults or blocked producers");
                EXIT_RUNTIME
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
