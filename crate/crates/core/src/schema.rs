//! Query-conditioned extraction schemas: what columns the cache table has.
//!
//! A schema is induced from the query alone by one model call, parsed
//! leniently out of whatever prose surrounds the JSON, and normalized so
//! downstream code can rely on well-formed slot names and a closed kind set.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, ModelProfile};
use crate::prompts::{self, PromptSet};

/// Hard ceiling on schema width; induction truncates, gold loading rejects.
pub const DEFAULT_MAX_SLOTS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Number,
    Datetime,
    Boolean,
}

impl ValueKind {
    pub fn label(self) -> &'static str {
        match self {
            ValueKind::Text => "text",
            ValueKind::Number => "number",
            ValueKind::Datetime => "datetime",
            ValueKind::Boolean => "boolean",
        }
    }
}

/// Where a schema came from; focus-extended schemas are induced schemas grown
/// by extraction-time discoveries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaOrigin {
    Induced,
    Gold,
    FocusExtended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaSlot {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub kind: ValueKind,
}

impl SchemaSlot {
    pub fn new(name: impl Into<String>, description: impl Into<String>, kind: ValueKind) -> Self {
        SchemaSlot { name: name.into(), description: description.into(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionSchema {
    pub slots: Vec<SchemaSlot>,
    pub origin: SchemaOrigin,
}

impl ExtractionSchema {
    pub fn new(slots: Vec<SchemaSlot>, origin: SchemaOrigin) -> Self {
        ExtractionSchema { slots, origin }
    }

    /// Built-in degenerate schema used when induction output never parses:
    /// the loop must keep going, just with a single free-text column.
    pub fn minimal_fallback() -> Self {
        ExtractionSchema {
            slots: vec![SchemaSlot::new("fact", "a query-relevant fact", ValueKind::Text)],
            origin: SchemaOrigin::Induced,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&SchemaSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    /// True when `other` has every slot of `self` (by name) and at least one more.
    pub fn is_proper_subset_of(&self, other: &ExtractionSchema) -> bool {
        other.slots.len() > self.slots.len()
            && self.slots.iter().all(|s| other.slot(&s.name).is_some())
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema parse failed: {0}")]
    Parse(String),
    #[error("gold schema file not found: {0}")]
    NotFound(String),
    #[error("gold schema invalid: {0}")]
    Invalid(String),
}

/// Induction result: the schema plus the raw model output it was parsed from.
#[derive(Debug, Clone)]
pub struct InducedSchema {
    pub schema: ExtractionSchema,
    pub raw_output: String,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub enum InduceError {
    Gateway(GatewayError),
    /// No parseable slot array even after repair; carries the last output so
    /// the caller can record it before degrading.
    Parse { last_output: String },
}

/// Lowercase-snake normalization for slot names; `None` when nothing usable
/// remains (must start with a letter).
pub fn normalize_slot_name(raw: &str) -> Option<String> {
    let mut out = String::new();
    let mut pending_sep = false;
    for c in raw.trim().chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c);
        } else {
            pending_sep = true;
        }
    }
    let out = out.trim_matches('_').to_string();
    if out.is_empty() || !out.chars().next().unwrap().is_ascii_alphabetic() {
        return None;
    }
    Some(out)
}

/// Map a free-form kind string onto the closed kind set. The bool is false
/// for unknown strings (caller decides whether that is a warning or an error).
pub fn kind_from_str(raw: &str) -> (ValueKind, bool) {
    match raw.trim().to_ascii_lowercase().as_str() {
        "text" | "string" | "str" => (ValueKind::Text, true),
        "number" | "numeric" | "int" | "integer" | "float" | "real" | "double" => {
            (ValueKind::Number, true)
        }
        "datetime" | "date" | "time" | "timestamp" => (ValueKind::Datetime, true),
        "boolean" | "bool" | "yes/no" | "yesno" | "yes_no" => (ValueKind::Boolean, true),
        _ => (ValueKind::Text, false),
    }
}

/// Candidate JSON arrays embedded in `text`, in order of appearance.
/// Each candidate is returned with the byte range it occupies.
pub(crate) fn json_array_candidates(text: &str) -> Vec<(serde_json::Value, std::ops::Range<usize>)> {
    let mut found = Vec::new();
    for (idx, c) in text.char_indices() {
        if c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[idx..])
            .into_iter::<serde_json::Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.is_array() {
                let end = idx + stream.byte_offset();
                found.push((value, idx..end));
            }
        }
    }
    found
}

fn slot_from_object(
    obj: &serde_json::Map<String, serde_json::Value>,
    warnings: &mut Vec<String>,
) -> Option<SchemaSlot> {
    let raw_name = obj.get("name").and_then(|v| v.as_str())?;
    let name = match normalize_slot_name(raw_name) {
        Some(name) => name,
        None => {
            warnings.push(format!("dropped slot with unusable name {raw_name:?}"));
            return None;
        }
    };
    let description = obj
        .get("description")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .trim()
        .to_string();
    let kind = match obj.get("kind").or_else(|| obj.get("type")) {
        None => ValueKind::Text,
        Some(v) => match v.as_str() {
            Some(s) => {
                let (kind, known) = kind_from_str(s);
                if !known {
                    warnings.push(format!("slot {name}: unknown kind {s:?} mapped to text"));
                }
                kind
            }
            None => {
                warnings.push(format!("slot {name}: non-string kind mapped to text"));
                ValueKind::Text
            }
        },
    };
    Some(SchemaSlot { name, description, kind })
}

/// Lenient slot-array interpretation: keep valid slots, dedupe by normalized
/// name (first wins), truncate to `max_slots`. `None` if no valid slot at all.
fn slots_from_array(
    elements: &[serde_json::Value],
    max_slots: usize,
    warnings: &mut Vec<String>,
) -> Option<Vec<SchemaSlot>> {
    let mut slots: Vec<SchemaSlot> = Vec::new();
    let mut local = Vec::new();
    for element in elements {
        let Some(obj) = element.as_object() else {
            local.push("dropped non-object slot entry".to_string());
            continue;
        };
        let Some(slot) = slot_from_object(obj, &mut local) else { continue };
        if slots.iter().any(|s| s.name == slot.name) {
            local.push(format!("dropped duplicate slot {}", slot.name));
            continue;
        }
        slots.push(slot);
    }
    if slots.is_empty() {
        return None;
    }
    warnings.append(&mut local);
    if slots.len() > max_slots {
        warnings.push(format!("schema truncated from {} to {max_slots} slots", slots.len()));
        slots.truncate(max_slots);
    }
    Some(slots)
}

/// Find the first JSON array in `text` that yields at least one valid slot.
pub fn parse_schema(
    text: &str,
    max_slots: usize,
) -> Result<(Vec<SchemaSlot>, Vec<String>), SchemaError> {
    for (value, _range) in json_array_candidates(text) {
        let elements = value.as_array().expect("candidate is an array");
        let mut warnings = Vec::new();
        if let Some(slots) = slots_from_array(elements, max_slots, &mut warnings) {
            return Ok((slots, warnings));
        }
    }
    Err(SchemaError::Parse("no JSON array with at least one valid slot found".to_string()))
}

/// Compact JSON rendering of the slots; `parse_schema(render_schema(s))`
/// returns the same slots.
pub fn render_schema(schema: &ExtractionSchema) -> String {
    serde_json::to_string(&schema.slots).expect("slots serialize")
}

/// Strict loader for curated schema files: the whole file must be one JSON
/// array of fully valid slots (known kinds, unique normalized names).
pub fn load_gold_schema(path: &Path) -> Result<ExtractionSchema, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SchemaError::NotFound(path.display().to_string())
        } else {
            SchemaError::Invalid(format!("{}: {e}", path.display()))
        }
    })?;
    parse_gold_schema(&text).map_err(|e| match e {
        SchemaError::Invalid(msg) => SchemaError::Invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_gold_schema(text: &str) -> Result<ExtractionSchema, SchemaError> {
    let value: serde_json::Value = serde_json::from_str(text.trim())
        .map_err(|e| SchemaError::Invalid(format!("not valid JSON: {e}")))?;
    let elements = value
        .as_array()
        .ok_or_else(|| SchemaError::Invalid("top-level value is not an array".to_string()))?;
    if elements.is_empty() {
        return Err(SchemaError::Invalid("schema has no slots".to_string()));
    }
    let mut slots: Vec<SchemaSlot> = Vec::new();
    for (i, element) in elements.iter().enumerate() {
        let obj = element
            .as_object()
            .ok_or_else(|| SchemaError::Invalid(format!("slot {i} is not an object")))?;
        let raw_name = obj
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| SchemaError::Invalid(format!("slot {i} has no name")))?;
        let name = normalize_slot_name(raw_name)
            .ok_or_else(|| SchemaError::Invalid(format!("slot {i} name {raw_name:?} unusable")))?;
        if slots.iter().any(|s| s.name == name) {
            return Err(SchemaError::Invalid(format!("duplicate slot name {name}")));
        }
        let description =
            obj.get("description").and_then(|v| v.as_str()).unwrap_or_default().trim().to_string();
        let kind = match obj.get("kind").or_else(|| obj.get("type")) {
            None => ValueKind::Text,
            Some(v) => {
                let s = v.as_str().ok_or_else(|| {
                    SchemaError::Invalid(format!("slot {name} kind is not a string"))
                })?;
                let (kind, known) = kind_from_str(s);
                if !known {
                    return Err(SchemaError::Invalid(format!("slot {name} has unknown kind {s:?}")));
                }
                kind
            }
        };
        slots.push(SchemaSlot { name, description, kind });
    }
    if slots.len() > DEFAULT_MAX_SLOTS {
        return Err(SchemaError::Invalid(format!(
            "schema has {} slots, more than the {DEFAULT_MAX_SLOTS}-slot ceiling",
            slots.len()
        )));
    }
    Ok(ExtractionSchema::new(slots, SchemaOrigin::Gold))
}

/// One model call (plus bounded repairs) that turns the query into a schema.
pub fn induce_schema(
    query: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompt_set: &PromptSet,
    max_slots: usize,
    repair_retries: usize,
) -> Result<InducedSchema, InduceError> {
    let user = prompt_set.fill(&prompt_set.schema_induction, &[("query", query)]);
    let outcome = prompts::call_with_repair(
        gateway,
        profile,
        None,
        user,
        |bad| prompt_set.fill(&prompt_set.schema_repair, &[("bad_output", bad)]),
        repair_retries,
        |text| match parse_schema(text, max_slots) {
            Ok((slots, warnings)) => Ok((slots, warnings)),
            Err(e) => Err(e.to_string()),
        },
    )
    .map_err(InduceError::Gateway)?;
    match outcome.value {
        Some(slots) => Ok(InducedSchema {
            schema: ExtractionSchema::new(slots, SchemaOrigin::Induced),
            raw_output: outcome.last_output,
            warnings: outcome.warnings,
        }),
        None => Err(InduceError::Parse { last_output: outcome.last_output }),
    }
}
