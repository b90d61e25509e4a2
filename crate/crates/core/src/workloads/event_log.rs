// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! JSON Lines event log, one event per line:
//!
//! ```text
//! {"type":"EV_LOCK_CALL","ts":100,"cpu":0,"payload":{"mutex":10}}
//! ```
//!
//! `type` is a registered name or a hex id (`"0x0100"`). `ts` is present iff
//! the type carries a timestamp. `cpu` names the originating event generator
//! and defaults to 0. Byte fields are written as lowercase hex strings.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::CpuId;
use crate::event_model::{Event, EventTypeRegistry, FieldKind, Value};

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("event log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("cannot log event: {0}")]
    Unloggable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub cpu: CpuId,
    pub event: Event,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// One log line (without newline) for `entry`.
pub fn format_line(registry: &EventTypeRegistry, entry: &LogEntry) -> Result<String, EventLogError> {
    let event = &entry.event;
    registry
        .wire_size(event)
        .map_err(|e| EventLogError::Unloggable(e.to_string()))?;
    let schema = registry.schema(event.type_id).expect("checked above");
    let mut payload = Map::new();
    for (spec, value) in schema.fields.iter().zip(&event.payload) {
        let v = match value {
            Value::Int(i) => Json::from(*i),
            Value::Bytes(b) => Json::from(hex(b)),
        };
        payload.insert(spec.name.clone(), v);
    }
    let mut obj = Map::new();
    obj.insert("type".into(), Json::from(schema.name.clone()));
    if let Some(ts) = event.ts {
        obj.insert("ts".into(), Json::from(ts));
    }
    obj.insert("cpu".into(), Json::from(entry.cpu));
    obj.insert("payload".into(), Json::Object(payload));
    Ok(Json::Object(obj).to_string())
}

/// Parses one log line; `line` is 1-based and only used for errors.
pub fn parse_line(
    registry: &EventTypeRegistry,
    text: &str,
    line: usize,
) -> Result<LogEntry, EventLogError> {
    let bad = |reason: String| EventLogError::MalformedLine { line, reason };
    let json: Json = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let obj = json.as_object().ok_or_else(|| bad("not a JSON object".into()))?;
    let ty = obj
        .get("type")
        .and_then(Json::as_str)
        .ok_or_else(|| bad("missing \"type\"".into()))?;
    let type_id = registry.resolve(ty).map_err(|e| bad(e.to_string()))?;
    let schema = registry.schema(type_id).expect("resolved");
    let ts = match obj.get("ts") {
        None | Some(Json::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .and_then(|t| u32::try_from(t).ok())
                .ok_or_else(|| bad("\"ts\" must be a u32".into()))?,
        ),
    };
    if ts.is_some() != schema.timestamp {
        return Err(bad(format!(
            "{} {} a timestamp",
            schema.name,
            if schema.timestamp { "requires" } else { "carries no" }
        )));
    }
    let cpu = match obj.get("cpu") {
        None => 0,
        Some(v) => v
            .as_u64()
            .and_then(|c| u8::try_from(c).ok())
            .ok_or_else(|| bad("\"cpu\" must be a small integer".into()))?,
    };
    let empty = Map::new();
    let fields = match obj.get("payload") {
        None => &empty,
        Some(Json::Object(m)) => m,
        Some(_) => return Err(bad("\"payload\" must be an object".into())),
    };
    let mut payload = Vec::with_capacity(schema.fields.len());
    for spec in &schema.fields {
        let raw = fields
            .get(&spec.name)
            .ok_or_else(|| bad(format!("payload field {:?} missing", spec.name)))?;
        let value = match spec.kind {
            FieldKind::Bytes => Value::Bytes(
                raw.as_str()
                    .and_then(unhex)
                    .ok_or_else(|| bad(format!("{:?} must be a hex string", spec.name)))?,
            ),
            _ => Value::Int(
                raw.as_u64()
                    .ok_or_else(|| bad(format!("{:?} must be an unsigned integer", spec.name)))?,
            ),
        };
        payload.push(value);
    }
    if let Some(extra) = fields.keys().find(|k| schema.field_index(k).is_none()) {
        return Err(bad(format!("unknown payload field {extra:?}")));
    }
    let event = Event::new(type_id, ts, payload);
    registry.wire_size(&event).map_err(|e| bad(e.to_string()))?;
    Ok(LogEntry { cpu, event })
}

pub fn write_event_log(
    registry: &EventTypeRegistry,
    entries: &[LogEntry],
    path: impl AsRef<Path>,
) -> Result<(), EventLogError> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in entries {
        writeln!(out, "{}", format_line(registry, e)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_event_log(
    registry: &EventTypeRegistry,
    path: impl AsRef<Path>,
) -> Result<Vec<LogEntry>, EventLogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(parse_line(registry, &line, i + 1)?);
    }
    Ok(entries)
}
