// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

//! Diagnosis events, the event type registry, and the wire format.
//!
//! An event on the wire is `type id (u16 LE) | [timestamp (u32 LE)] | fields...`.
//! Scalar fields are little-endian and exactly as wide as their schema says.
//! A `Bytes` field carries a `u16` length prefix and may only be the last field
//! of a schema. Nothing else is transmitted: an event is decodable from its
//! bytes plus the registry, with no state carried between events.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First id available to user-defined event types.
pub const FIRST_USER_TYPE_ID: u16 = 0x0100;

/// Bytes taken by the type identifier.
pub const TYPE_ID_BYTES: usize = 2;
/// Bytes taken by the optional timestamp.
pub const TIMESTAMP_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventTypeId(pub u16);

impl EventTypeId {
    pub const GET_BALANCE_CALL: Self = Self(0x0001);
    pub const SET_BALANCE_RETURN: Self = Self(0x0002);
    pub const RACE_DETECTED: Self = Self(0x0003);
    pub const LOCK_CALL: Self = Self(0x0010);
    pub const LOCK_RETURN: Self = Self(0x0011);
    pub const LOCK_ACQ_TIME: Self = Self(0x0012);
    pub const SEND_LOCK_PROFILE: Self = Self(0x0013);
    pub const LOCK_PROFILE: Self = Self(0x0014);
    pub const MSG_SEND: Self = Self(0x0020);
    pub const MSG_RECV: Self = Self(0x0021);

    pub fn is_reserved(self) -> bool {
        self.0 < FIRST_USER_TYPE_ID
    }
}

impl fmt::Display for EventTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04x}", self.0)
    }
}

/// Kind of a payload field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    U8,
    U16,
    U32,
    U64,
    /// Length-prefixed (u16) byte string; only allowed as the final field.
    Bytes,
}

impl FieldKind {
    /// Fixed width in bytes; for `Bytes` this is the width of the length prefix.
    pub fn width(self) -> usize {
        match self {
            FieldKind::U8 => 1,
            FieldKind::U16 | FieldKind::Bytes => 2,
            FieldKind::U32 => 4,
            FieldKind::U64 => 8,
        }
    }

    fn max(self) -> u64 {
        match self {
            FieldKind::U8 => u8::MAX as u64,
            FieldKind::U16 => u16::MAX as u64,
            FieldKind::U32 => u32::MAX as u64,
            FieldKind::U64 => u64::MAX,
            FieldKind::Bytes => 0,
        }
    }

    /// Truncates a wider value to this field's width.
    pub fn truncate(self, value: u64) -> u64 {
        value & self.max()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Payload layout of one event type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    pub name: String,
    pub timestamp: bool,
    pub fields: Vec<FieldSpec>,
}

impl EventSchema {
    pub fn new(name: impl Into<String>, timestamp: bool, fields: Vec<FieldSpec>) -> Self {
        Self {
            name: name.into(),
            timestamp,
            fields,
        }
    }

    /// Size of the fixed part of an encoded event of this type.
    pub fn fixed_size(&self) -> usize {
        TYPE_ID_BYTES
            + if self.timestamp { TIMESTAMP_BYTES } else { 0 }
            + self.fields.iter().map(|f| f.kind.width()).sum::<usize>()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn as_int(&self) -> Option<u64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Bytes(_) => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            Value::Int(_) => None,
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

/// A self-contained diagnosis event. Payload values are positional and follow
/// the field order of the registered schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub type_id: EventTypeId,
    pub ts: Option<u32>,
    pub payload: Vec<Value>,
}

impl Event {
    pub fn new(type_id: EventTypeId, ts: Option<u32>, payload: Vec<Value>) -> Self {
        Self {
            type_id,
            ts,
            payload,
        }
    }

    /// Integer value of payload field `index`, if present and integral.
    pub fn int(&self, index: usize) -> Option<u64> {
        self.payload.get(index).and_then(Value::as_int)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("event type {0} is already registered")]
    DuplicateTypeId(EventTypeId),
    #[error("event type {0} lies in the reserved built-in range")]
    ReservedTypeId(EventTypeId),
    #[error("event type name {0:?} is already registered")]
    DuplicateTypeName(String),
    #[error("invalid schema for {name}: {reason}")]
    InvalidSchema { name: String, reason: String },
    #[error("unknown event type {0}")]
    UnknownTypeId(EventTypeId),
    #[error("unknown event type name {0:?}")]
    UnknownTypeName(String),
    #[error("payload does not match schema of {type_id}: {reason}")]
    SchemaMismatch { type_id: EventTypeId, reason: String },
    #[error("truncated payload: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("{0} trailing bytes after event")]
    TrailingBytes(usize),
}

/// Maps type ids to payload schemas. Immutable once configuration is done;
/// share it behind an `Arc` when several components need it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTypeRegistry {
    schemas: BTreeMap<EventTypeId, EventSchema>,
    by_name: BTreeMap<String, EventTypeId>,
}

impl EventTypeRegistry {
    /// An empty registry without the built-in types.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding every built-in event type.
    pub fn builtin() -> Self {
        use FieldKind::*;
        let f = FieldSpec::new;
        let mut r = Self::empty();
        let builtins = [
            (
                EventTypeId::GET_BALANCE_CALL,
                EventSchema::new("EV_GET_BALANCE_CALL", true, vec![f("src", U32)]),
            ),
            (
                EventTypeId::SET_BALANCE_RETURN,
                EventSchema::new("EV_SET_BALANCE_RETURN", true, vec![f("src", U32)]),
            ),
            (
                EventTypeId::RACE_DETECTED,
                EventSchema::new("EV_RACE_DETECTED", true, vec![]),
            ),
            (
                EventTypeId::LOCK_CALL,
                EventSchema::new("EV_LOCK_CALL", true, vec![f("mutex", U64)]),
            ),
            (
                EventTypeId::LOCK_RETURN,
                EventSchema::new("EV_LOCK_RETURN", true, vec![]),
            ),
            (
                EventTypeId::LOCK_ACQ_TIME,
                EventSchema::new(
                    "EV_LOCK_ACQ_TIME",
                    false,
                    vec![f("time", U16), f("lock", U16)],
                ),
            ),
            (
                EventTypeId::SEND_LOCK_PROFILE,
                EventSchema::new("EV_SEND_LOCK_PROFILE", true, vec![]),
            ),
            (
                EventTypeId::LOCK_PROFILE,
                EventSchema::new("EV_LOCK_PROFILE", true, vec![f("rows", Bytes)]),
            ),
            (
                EventTypeId::MSG_SEND,
                EventSchema::new(
                    "EV_MSG_SEND",
                    true,
                    vec![f("peer", U16), f("msg_type", U16)],
                ),
            ),
            (
                EventTypeId::MSG_RECV,
                EventSchema::new(
                    "EV_MSG_RECV",
                    true,
                    vec![f("peer", U16), f("msg_type", U16)],
                ),
            ),
        ];
        for (id, schema) in builtins {
            r.insert(id, schema).expect("built-in schemas are valid");
        }
        r
    }

    /// Registers a user event type. Ids below [`FIRST_USER_TYPE_ID`] are
    /// reserved for the built-in setup.
    pub fn register(&mut self, id: EventTypeId, schema: EventSchema) -> Result<(), EventError> {
        if id.is_reserved() {
            return Err(EventError::ReservedTypeId(id));
        }
        self.insert(id, schema)
    }

    /// Registers at any id, including the reserved range.
    pub fn register_builtin(
        &mut self,
        id: EventTypeId,
        schema: EventSchema,
    ) -> Result<(), EventError> {
        self.insert(id, schema)
    }

    fn insert(&mut self, id: EventTypeId, schema: EventSchema) -> Result<(), EventError> {
        if self.schemas.contains_key(&id) {
            return Err(EventError::DuplicateTypeId(id));
        }
        if self.by_name.contains_key(&schema.name) {
            return Err(EventError::DuplicateTypeName(schema.name));
        }
        if let Some(pos) = schema
            .fields
            .iter()
            .position(|f| f.kind == FieldKind::Bytes)
        {
            if pos + 1 != schema.fields.len() {
                return Err(EventError::InvalidSchema {
                    name: schema.name,
                    reason: "a bytes field must be the last field".into(),
                });
            }
        }
        self.by_name.insert(schema.name.clone(), id);
        self.schemas.insert(id, schema);
        Ok(())
    }

    pub fn schema(&self, id: EventTypeId) -> Result<&EventSchema, EventError> {
        self.schemas.get(&id).ok_or(EventError::UnknownTypeId(id))
    }

    pub fn contains(&self, id: EventTypeId) -> bool {
        self.schemas.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EventTypeId, &EventSchema)> {
        self.schemas.iter().map(|(id, s)| (*id, s))
    }

    /// Number of user (non-reserved) types.
    pub fn user_type_count(&self) -> usize {
        self.schemas.keys().filter(|id| !id.is_reserved()).count()
    }

    pub fn name_of(&self, id: EventTypeId) -> Option<&str> {
        self.schemas.get(&id).map(|s| s.name.as_str())
    }

    /// Resolves a type given by its registered name or as a hex id (`0x0100`).
    pub fn resolve(&self, name: &str) -> Result<EventTypeId, EventError> {
        if let Some(id) = self.by_name.get(name) {
            return Ok(*id);
        }
        let hex = name
            .strip_prefix("0x")
            .or_else(|| name.strip_prefix("0X"));
        if let Some(hex) = hex {
            if let Ok(raw) = u16::from_str_radix(hex, 16) {
                let id = EventTypeId(raw);
                if self.contains(id) {
                    return Ok(id);
                }
                return Err(EventError::UnknownTypeId(id));
            }
        }
        Err(EventError::UnknownTypeName(name.to_owned()))
    }

    /// Encoded size of `event`, after checking it against its schema.
    pub fn wire_size(&self, event: &Event) -> Result<usize, EventError> {
        let schema = self.schema(event.type_id)?;
        check_payload(schema, event)?;
        Ok(schema.fixed_size() + variable_len(event))
    }

    /// Wire size for events already known to match their schema.
    pub(crate) fn wire_size_unchecked(&self, event: &Event) -> usize {
        self.schemas
            .get(&event.type_id)
            .map(|s| s.fixed_size() + variable_len(event))
            .unwrap_or(TYPE_ID_BYTES)
    }
}

fn variable_len(event: &Event) -> usize {
    event
        .payload
        .iter()
        .map(|v| match v {
            Value::Bytes(b) => b.len(),
            Value::Int(_) => 0,
        })
        .sum()
}

fn mismatch(event: &Event, reason: impl Into<String>) -> EventError {
    EventError::SchemaMismatch {
        type_id: event.type_id,
        reason: reason.into(),
    }
}

fn check_payload(schema: &EventSchema, event: &Event) -> Result<(), EventError> {
    if schema.timestamp != event.ts.is_some() {
        return Err(mismatch(
            event,
            if schema.timestamp {
                "timestamp missing"
            } else {
                "type carries no timestamp"
            },
        ));
    }
    if schema.fields.len() != event.payload.len() {
        return Err(mismatch(
            event,
            format!(
                "expected {} fields, got {}",
                schema.fields.len(),
                event.payload.len()
            ),
        ));
    }
    for (spec, value) in schema.fields.iter().zip(&event.payload) {
        match (spec.kind, value) {
            (FieldKind::Bytes, Value::Bytes(b)) => {
                if b.len() > u16::MAX as usize {
                    return Err(mismatch(event, format!("{} longer than 65535", spec.name)));
                }
            }
            (FieldKind::Bytes, Value::Int(_)) => {
                return Err(mismatch(event, format!("{} must be bytes", spec.name)))
            }
            (_, Value::Bytes(_)) => {
                return Err(mismatch(event, format!("{} must be an integer", spec.name)))
            }
            (kind, Value::Int(v)) => {
                if *v > kind.max() {
                    return Err(mismatch(
                        event,
                        format!("{}={} exceeds {} bytes", spec.name, v, kind.width()),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Encodes `event` into its little-endian wire representation.
pub fn encode_event(registry: &EventTypeRegistry, event: &Event) -> Result<Vec<u8>, EventError> {
    let size = registry.wire_size(event)?;
    let mut out = Vec::with_capacity(size);
    encode_into(registry, event, &mut out)?;
    debug_assert_eq!(out.len(), size);
    Ok(out)
}

/// Appends the encoding of `event` to `out`.
pub fn encode_into(
    registry: &EventTypeRegistry,
    event: &Event,
    out: &mut Vec<u8>,
) -> Result<(), EventError> {
    let schema = registry.schema(event.type_id)?;
    check_payload(schema, event)?;
    out.extend_from_slice(&event.type_id.0.to_le_bytes());
    if let Some(ts) = event.ts {
        out.extend_from_slice(&ts.to_le_bytes());
    }
    for (spec, value) in schema.fields.iter().zip(&event.payload) {
        match value {
            Value::Int(v) => out.extend_from_slice(&v.to_le_bytes()[..spec.kind.width()]),
            Value::Bytes(b) => {
                out.extend_from_slice(&(b.len() as u16).to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EventError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(EventError::TruncatedPayload {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn uint(&mut self, width: usize) -> Result<u64, EventError> {
        let mut buf = [0u8; 8];
        buf[..width].copy_from_slice(self.take(width)?);
        Ok(u64::from_le_bytes(buf))
    }
}

/// Decodes one event from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_prefix(
    registry: &EventTypeRegistry,
    bytes: &[u8],
) -> Result<(Event, usize), EventError> {
    let mut r = Reader { bytes, pos: 0 };
    let type_id = EventTypeId(r.uint(TYPE_ID_BYTES)? as u16);
    let schema = registry.schema(type_id)?;
    let ts = if schema.timestamp {
        Some(r.uint(TIMESTAMP_BYTES)? as u32)
    } else {
        None
    };
    let mut payload = Vec::with_capacity(schema.fields.len());
    for spec in &schema.fields {
        match spec.kind {
            FieldKind::Bytes => {
                let len = r.uint(2)? as usize;
                payload.push(Value::Bytes(r.take(len)?.to_vec()));
            }
            kind => payload.push(Value::Int(r.uint(kind.width())?)),
        }
    }
    Ok((Event::new(type_id, ts, payload), r.pos))
}

/// Decodes exactly one event; trailing bytes are an error.
pub fn decode_event(registry: &EventTypeRegistry, bytes: &[u8]) -> Result<Event, EventError> {
    let (event, used) = decode_prefix(registry, bytes)?;
    if used != bytes.len() {
        return Err(EventError::TrailingBytes(bytes.len() - used));
    }
    Ok(event)
}

/// Decodes a concatenation of encoded events.
pub fn decode_stream(
    registry: &EventTypeRegistry,
    mut bytes: &[u8],
) -> Result<Vec<Event>, EventError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (event, used) = decode_prefix(registry, bytes)?;
        out.push(event);
        bytes = &bytes[used..];
    }
    Ok(out)
}

/// Concatenated encoding of `events`.
pub fn encode_stream(registry: &EventTypeRegistry, events: &[Event]) -> Result<Vec<u8>, EventError> {
    let mut out = Vec::new();
    for e in events {
        encode_into(registry, e, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reg() -> EventTypeRegistry {
        EventTypeRegistry::builtin()
    }

    #[test]
    fn register_user_type() {
        let mut r = EventTypeRegistry::empty();
        r.register(
            EventTypeId(0x0100),
            EventSchema::new("SRC", false, vec![FieldSpec::new("src", FieldKind::U16)]),
        )
        .unwrap();
        assert_eq!(r.user_type_count(), 1);
        let err = r
            .register(EventTypeId(0x0100), EventSchema::new("OTHER", false, vec![]))
            .unwrap_err();
        assert_eq!(err, EventError::DuplicateTypeId(EventTypeId(0x0100)));
    }

    #[test]
    fn reserved_ids_need_builtin_setup() {
        let mut r = EventTypeRegistry::empty();
        let schema = EventSchema::new(
            "EV_LOCK_CALL",
            true,
            vec![FieldSpec::new("mutex", FieldKind::U64)],
        );
        assert_eq!(
            r.register(EventTypeId::LOCK_CALL, schema.clone()),
            Err(EventError::ReservedTypeId(EventTypeId::LOCK_CALL))
        );
        r.register_builtin(EventTypeId::LOCK_CALL, schema).unwrap();
        let e = Event::new(EventTypeId::LOCK_CALL, Some(0), vec![Value::Int(0)]);
        assert_eq!(r.wire_size(&e).unwrap(), 14);
    }

    #[test]
    fn bytes_field_must_be_last() {
        let mut r = EventTypeRegistry::empty();
        let schema = EventSchema::new(
            "BAD",
            false,
            vec![
                FieldSpec::new("blob", FieldKind::Bytes),
                FieldSpec::new("x", FieldKind::U8),
            ],
        );
        assert!(matches!(
            r.register(EventTypeId(0x200), schema),
            Err(EventError::InvalidSchema { .. })
        ));
    }

    #[test]
    fn lock_event_sizes() {
        let r = reg();
        let call = Event::new(EventTypeId::LOCK_CALL, Some(1), vec![Value::Int(0xA)]);
        let ret = Event::new(EventTypeId::LOCK_RETURN, Some(0), vec![]);
        let acq = Event::new(
            EventTypeId::LOCK_ACQ_TIME,
            None,
            vec![Value::Int(250), Value::Int(0xBEEF)],
        );
        assert_eq!(encode_event(&r, &call).unwrap().len(), 14);
        assert_eq!(encode_event(&r, &ret).unwrap().len(), 6);
        assert_eq!(encode_event(&r, &acq).unwrap().len(), 6);
        assert_eq!(
            encode_event(&r, &acq).unwrap(),
            vec![0x12, 0x00, 0xFA, 0x00, 0xEF, 0xBE]
        );
    }

    #[test]
    fn empty_payload_is_two_bytes() {
        let mut r = EventTypeRegistry::empty();
        r.register(EventTypeId(0x0101), EventSchema::new("PING", false, vec![]))
            .unwrap();
        let e = Event::new(EventTypeId(0x0101), None, vec![]);
        assert_eq!(encode_event(&r, &e).unwrap(), vec![0x01, 0x01]);
    }

    #[test]
    fn schema_mismatch_detected() {
        let r = reg();
        let no_ts = Event::new(EventTypeId::LOCK_RETURN, None, vec![]);
        assert!(matches!(
            encode_event(&r, &no_ts),
            Err(EventError::SchemaMismatch { .. })
        ));
        let too_wide = Event::new(
            EventTypeId::LOCK_ACQ_TIME,
            None,
            vec![Value::Int(70_000), Value::Int(1)],
        );
        assert!(matches!(
            encode_event(&r, &too_wide),
            Err(EventError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn decode_errors() {
        let r = reg();
        assert_eq!(
            decode_event(&r, &[0xFF, 0xFF]),
            Err(EventError::UnknownTypeId(EventTypeId(0xFFFF)))
        );
        assert!(matches!(
            decode_event(&r, &[0x11, 0x00, 0x05]),
            Err(EventError::TruncatedPayload { .. })
        ));
        assert_eq!(
            decode_event(&r, &[0x11, 0x00, 0, 0, 0, 0, 9]),
            Err(EventError::TrailingBytes(1))
        );
    }

    #[test]
    fn round_trip_lock_call() {
        let r = reg();
        let e = Event::new(EventTypeId::LOCK_CALL, Some(100), vec![Value::Int(0xA)]);
        let bytes = encode_event(&r, &e).unwrap();
        assert_eq!(decode_event(&r, &bytes).unwrap(), e);
    }

    #[test]
    fn resolve_by_name_or_hex() {
        let r = reg();
        assert_eq!(r.resolve("EV_LOCK_CALL").unwrap(), EventTypeId::LOCK_CALL);
        assert_eq!(r.resolve("0x0011").unwrap(), EventTypeId::LOCK_RETURN);
        assert!(r.resolve("0x7777").is_err());
        assert!(r.resolve("nope").is_err());
    }

    fn arb_event() -> impl Strategy<Value = Event> {
        let ids: Vec<EventTypeId> = reg().iter().map(|(id, _)| id).collect();
        (
            proptest::sample::select(ids),
            any::<u32>(),
            proptest::collection::vec(any::<u64>(), 4),
            proptest::collection::vec(any::<u8>(), 0..300),
        )
            .prop_map(|(id, ts, ints, blob)| {
                let r = reg();
                let schema = r.schema(id).unwrap();
                let payload = schema
                    .fields
                    .iter()
                    .zip(ints)
                    .map(|(f, v)| match f.kind {
                        FieldKind::Bytes => Value::Bytes(blob.clone()),
                        k => Value::Int(k.truncate(v)),
                    })
                    .collect();
                Event::new(id, schema.timestamp.then_some(ts), payload)
            })
    }

    proptest! {
        #[test]
        fn encode_decode_identity(events in proptest::collection::vec(arb_event(), 0..20)) {
            let r = reg();
            for e in &events {
                let bytes = encode_event(&r, e).unwrap();
                prop_assert_eq!(bytes.len(), r.wire_size(e).unwrap());
                prop_assert_eq!(&decode_event(&r, &bytes).unwrap(), e);
            }
            // no decoder state survives between events
            let stream = encode_stream(&r, &events).unwrap();
            prop_assert_eq!(decode_stream(&r, &stream).unwrap(), events);
        }
    }
}
