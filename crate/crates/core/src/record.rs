//! Extracted rows: typed cells, canonical rendering, and the lenient parser
//! that turns model output into rows conforming to a schema.
//!
//! Row identity everywhere (dedupe, cache merge bookkeeping) is the
//! normalized key from [`normalize_row`]: slot=value pairs in schema order,
//! case- and whitespace-insensitive for text, canonical for numbers.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::schema::{normalize_slot_name, ExtractionSchema, SchemaSlot, ValueKind};

/// Unit separator: cannot occur in normalized cell text, so joined keys are
/// collision-free.
pub const KEY_SEP: char = '\u{1f}';

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Null,
    Text(String),
    Number(f64),
    Datetime(String),
    Boolean(bool),
}

impl CellValue {
    /// Human-facing cell text used in cache renderings: nulls are empty,
    /// numbers canonical, booleans lowercase.
    pub fn display_text(&self) -> String {
        match self {
            CellValue::Null => String::new(),
            CellValue::Text(s) | CellValue::Datetime(s) => s.clone(),
            CellValue::Number(x) => canonical_decimal(*x),
            CellValue::Boolean(b) => b.to_string(),
        }
    }

    /// Case-folded, whitespace-collapsed form used for row identity.
    pub fn normalized_key_text(&self) -> String {
        match self {
            CellValue::Null => String::new(),
            CellValue::Text(s) | CellValue::Datetime(s) => {
                s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
            }
            CellValue::Number(x) => canonical_decimal(*x),
            CellValue::Boolean(b) => b.to_string(),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, CellValue::Null)
    }
}

impl Serialize for CellValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CellValue::Null => serializer.serialize_none(),
            CellValue::Text(s) | CellValue::Datetime(s) => serializer.serialize_str(s),
            CellValue::Number(x) => serializer.serialize_f64(*x),
            CellValue::Boolean(b) => serializer.serialize_bool(*b),
        }
    }
}

impl<'de> serde::Deserialize<'de> for CellValue {
    /// Reads the natural JSON forms back; strings come back as `Text` (the
    /// datetime distinction is not represented in serialized cells).
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = serde_json::Value::deserialize(deserializer)?;
        Ok(match value {
            serde_json::Value::Null => CellValue::Null,
            serde_json::Value::Bool(b) => CellValue::Boolean(b),
            serde_json::Value::Number(n) => CellValue::Number(n.as_f64().unwrap_or(0.0)),
            serde_json::Value::String(s) => CellValue::Text(s),
            other => CellValue::Text(other.to_string()),
        })
    }
}

/// Canonical decimal string for a number: round-trips to the same bits, uses
/// the fewest digits Display needs, and collapses `-0` to `0`. Rust's float
/// Display provides the digit selection; this wraps it with the zero rule and
/// a guard for non-finite input.
pub fn canonical_decimal(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        // JSON cannot produce these; render something stable anyway.
        return if x.is_nan() { "0".to_string() } else { format!("{x}") };
    }
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordRow {
    pub values: BTreeMap<String, CellValue>,
    /// Which chunk this row was extracted from, when known.
    pub source_chunk: Option<usize>,
}

impl RecordRow {
    pub fn new(values: BTreeMap<String, CellValue>) -> Self {
        RecordRow { values, source_chunk: None }
    }

    pub fn get(&self, slot: &str) -> &CellValue {
        self.values.get(slot).unwrap_or(&CellValue::Null)
    }

    /// Ensure every schema slot has an entry (nulls for absent ones) and drop
    /// entries for slots the schema does not have.
    pub fn conform_to(&mut self, schema: &ExtractionSchema) {
        let names: std::collections::BTreeSet<&str> =
            schema.slots.iter().map(|s| s.name.as_str()).collect();
        self.values.retain(|k, _| names.contains(k.as_str()));
        for slot in &schema.slots {
            self.values.entry(slot.name.clone()).or_insert(CellValue::Null);
        }
    }
}

/// A batch of rows plus the schema they conform to.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub schema: ExtractionSchema,
    pub rows: Vec<RecordRow>,
    /// The seek focus that produced this batch, if any.
    pub focus: Option<String>,
}

impl RecordSet {
    pub fn new(schema: ExtractionSchema, rows: Vec<RecordRow>) -> Self {
        RecordSet { schema, rows, focus: None }
    }

    pub fn empty(schema: ExtractionSchema) -> Self {
        RecordSet { schema, rows: Vec::new(), focus: None }
    }
}

/// Stable identity key: `slot=value` pairs in schema order joined by the unit
/// separator. Rows equal under this key are the same fact.
pub fn normalize_row(row: &RecordRow, schema: &ExtractionSchema) -> String {
    let mut parts = Vec::with_capacity(schema.slots.len());
    for slot in &schema.slots {
        parts.push(format!("{}={}", slot.name, row.get(&slot.name).normalized_key_text()));
    }
    parts.join(&KEY_SEP.to_string())
}

/// Drop rows whose normalized key was already seen, preserving first
/// occurrences and order.
pub fn dedupe_rows(rows: Vec<RecordRow>, schema: &ExtractionSchema) -> Vec<RecordRow> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if seen.insert(normalize_row(&row, schema)) {
            out.push(row);
        }
    }
    out
}

#[derive(Debug, Error)]
#[error("record parse failed: {0}")]
pub struct RecordParseError(pub String);

#[derive(Debug, Clone)]
pub struct ParsedRecords {
    pub rows: Vec<RecordRow>,
    /// Slots invented by the model beyond the schema, in order of appearance
    /// (only when the caller allowed them).
    pub extra_slots: Vec<SchemaSlot>,
    pub warnings: Vec<String>,
}

/// Coerce one JSON value into a cell of the slot's kind. Uncoercible values
/// are kept as text with a warning rather than dropped: bad typing should not
/// lose evidence.
pub fn coerce_cell(
    value: &serde_json::Value,
    kind: ValueKind,
    slot: &str,
    warnings: &mut Vec<String>,
) -> CellValue {
    use serde_json::Value as J;
    match (kind, value) {
        (_, J::Null) => CellValue::Null,
        (ValueKind::Text, J::String(s)) => CellValue::Text(s.clone()),
        (ValueKind::Text, J::Number(n)) => {
            CellValue::Text(canonical_decimal(n.as_f64().unwrap_or(0.0)))
        }
        (ValueKind::Text, J::Bool(b)) => CellValue::Text(b.to_string()),
        (ValueKind::Number, J::Number(n)) => CellValue::Number(n.as_f64().unwrap_or(0.0)),
        (ValueKind::Number, J::String(s)) => match s.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => CellValue::Number(x),
            _ => {
                warnings.push(format!("slot {slot}: kept uncoercible number {s:?} as text"));
                CellValue::Text(s.clone())
            }
        },
        (ValueKind::Datetime, J::String(s)) => {
            CellValue::Datetime(s.split_whitespace().collect::<Vec<_>>().join(" "))
        }
        (ValueKind::Boolean, J::Bool(b)) => CellValue::Boolean(*b),
        (ValueKind::Boolean, J::String(s)) => match s.trim().to_lowercase().as_str() {
            "true" | "yes" => CellValue::Boolean(true),
            "false" | "no" => CellValue::Boolean(false),
            _ => {
                warnings.push(format!("slot {slot}: kept uncoercible boolean {s:?} as text"));
                CellValue::Text(s.clone())
            }
        },
        (kind, other) => {
            let text = match other {
                J::String(s) => s.clone(),
                J::Number(n) => canonical_decimal(n.as_f64().unwrap_or(0.0)),
                J::Bool(b) => b.to_string(),
                _ => other.to_string(), // arrays/objects: compact JSON
            };
            warnings.push(format!(
                "slot {slot}: kept uncoercible {} value as text",
                kind.label()
            ));
            CellValue::Text(text)
        }
    }
}

/// Find the first JSON array of row objects in `text` and conform it to
/// `schema`. `allow_extra_slots` > 0 lets unknown keys become new text slots
/// (up to the budget, in order of appearance); otherwise they are dropped
/// with a warning. An empty array is a valid "nothing found" result.
pub fn parse_records(
    text: &str,
    schema: &ExtractionSchema,
    allow_extra_slots: usize,
) -> Result<ParsedRecords, RecordParseError> {
    for (value, _range) in crate::schema::json_array_candidates(text) {
        let elements = value.as_array().expect("candidate is an array");
        if !elements.is_empty() && !elements.iter().any(|e| e.is_object()) {
            continue; // an array with no objects at all cannot be a row table
        }
        return Ok(rows_from_elements(elements, schema, allow_extra_slots));
    }
    Err(RecordParseError("no JSON array of row objects found".to_string()))
}

fn rows_from_elements(
    elements: &[serde_json::Value],
    schema: &ExtractionSchema,
    allow_extra_slots: usize,
) -> ParsedRecords {
    let mut warnings = Vec::new();
    let mut extra_slots: Vec<SchemaSlot> = Vec::new();
    let mut rows = Vec::new();
    for (i, element) in elements.iter().enumerate() {
        let Some(obj) = element.as_object() else {
            warnings.push(format!("row {i}: dropped non-object entry"));
            continue;
        };
        let mut values = BTreeMap::new();
        for (raw_key, cell) in obj {
            let Some(key) = normalize_slot_name(raw_key) else {
                warnings.push(format!("row {i}: dropped cell with unusable key {raw_key:?}"));
                continue;
            };
            let known = schema
                .slot(&key)
                .or_else(|| extra_slots.iter().find(|s| s.name == key));
            match known {
                Some(slot) => {
                    let kind = slot.kind;
                    let slot_name = slot.name.clone();
                    let coerced = coerce_cell(cell, kind, &slot_name, &mut warnings);
                    values.insert(slot_name, coerced);
                }
                None if extra_slots.len() < allow_extra_slots => {
                    extra_slots.push(SchemaSlot::new(
                        key.clone(),
                        "discovered during extraction",
                        ValueKind::Text,
                    ));
                    let coerced = coerce_cell(cell, ValueKind::Text, &key, &mut warnings);
                    values.insert(key, coerced);
                }
                None => {
                    warnings.push(format!("row {i}: dropped unknown key {key:?}"));
                }
            }
        }
        // Null-fill to the schema (extras are filled by the caller once the
        // final slot set is known).
        for slot in &schema.slots {
            values.entry(slot.name.clone()).or_insert(CellValue::Null);
        }
        rows.push(RecordRow::new(values));
    }
    ParsedRecords { rows, extra_slots, warnings }
}
