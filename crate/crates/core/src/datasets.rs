//! Canonical task format and adapters for three public releases.
//!
//! A dataset is a JSONL file, one task per line:
//! `{"id", "family", "query", "text", "golds": [..], "gold_schema"?: [...],
//! "gold_table"?: {"slots": [..], "rows": [..]}}`.
//!
//! Adapters convert the raw release layouts (documented on [`adapt`]) into
//! this format. The repo does not vendor the real datasets; `data/` ships
//! small hand-written synthetic files in the canonical format instead.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::GoldTable;
use crate::record::CellValue;
use crate::schema::{parse_gold_schema, ExtractionSchema, SchemaSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Qa,
    Planning,
    Summarization,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Qa => "qa",
            Family::Planning => "planning",
            Family::Summarization => "summarization",
        })
    }
}

/// One runnable task: a query over a long text, with reference answers and
/// (optionally) a curated schema and/or gold extraction table.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub id: String,
    pub family: Family,
    pub query: String,
    pub text: String,
    pub golds: Vec<String>,
    pub gold_schema: Option<ExtractionSchema>,
    pub gold_table: Option<GoldTable>,
}

/// Serialized shape of one dataset line. `gold_schema` stays raw JSON so the
/// strict curated-schema parser is the single validator for slot lists.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireInstance {
    id: String,
    family: Family,
    query: String,
    text: String,
    golds: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    gold_schema: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    gold_table: Option<GoldTable>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("could not read {path}: {message}")]
    Io { path: String, message: String },
    #[error("could not write {path}: {message}")]
    Write { path: String, message: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: duplicate task id `{id}`")]
    DuplicateId { line: usize, id: String },
}

fn instance_from_wire(wire: WireInstance, line: usize) -> Result<TaskInstance, DatasetError> {
    let fail = |message: String| DatasetError::Format { line, message };
    if wire.id.trim().is_empty() {
        return Err(fail("empty id".to_string()));
    }
    if wire.query.trim().is_empty() {
        return Err(fail(format!("task `{}` has an empty query", wire.id)));
    }
    if wire.text.trim().is_empty() {
        return Err(fail(format!("task `{}` has empty text", wire.id)));
    }
    if wire.golds.is_empty() {
        return Err(fail(format!("task `{}` has no gold answers", wire.id)));
    }
    let gold_schema = match wire.gold_schema {
        None => None,
        Some(value) => Some(
            parse_gold_schema(&value.to_string())
                .map_err(|e| fail(format!("task `{}` gold_schema: {e}", wire.id)))?,
        ),
    };
    if let Some(table) = &wire.gold_table {
        if !table.is_rectangular() {
            return Err(fail(format!(
                "task `{}` gold_table is not rectangular ({} slots)",
                wire.id,
                table.slots.len()
            )));
        }
    }
    Ok(TaskInstance {
        id: wire.id,
        family: wire.family,
        query: wire.query,
        text: wire.text,
        golds: wire.golds,
        gold_schema,
        gold_table: wire.gold_table,
    })
}

fn wire_from_instance(inst: &TaskInstance) -> WireInstance {
    WireInstance {
        id: inst.id.clone(),
        family: inst.family,
        query: inst.query.clone(),
        text: inst.text.clone(),
        golds: inst.golds.clone(),
        gold_schema: inst.gold_schema.as_ref().map(|schema| {
            let slots: Vec<&SchemaSlot> = schema.slots.iter().collect();
            serde_json::to_value(slots).expect("slot list serializes")
        }),
        gold_table: inst.gold_table.clone(),
    }
}

/// Parse and validate a canonical JSONL dataset. Blank lines are skipped;
/// errors carry 1-based line numbers.
pub fn load_dataset(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(&raw)
}

pub fn parse_dataset(raw: &str) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut instances = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (index, line) in raw.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireInstance = serde_json::from_str(line)
            .map_err(|e| DatasetError::Format { line: line_no, message: e.to_string() })?;
        let instance = instance_from_wire(wire, line_no)?;
        if !seen.insert(instance.id.clone()) {
            return Err(DatasetError::DuplicateId { line: line_no, id: instance.id });
        }
        instances.push(instance);
    }
    Ok(instances)
}

pub fn write_dataset(path: &Path, instances: &[TaskInstance]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for inst in instances {
        let line = serde_json::to_string(&wire_from_instance(inst)).map_err(|e| {
            DatasetError::Write { path: path.display().to_string(), message: e.to_string() }
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DatasetError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Tact,
    Calendar,
    Qmsum,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tact" => Ok(SourceFormat::Tact),
            "calendar" => Ok(SourceFormat::Calendar),
            "qmsum" => Ok(SourceFormat::Qmsum),
            other => Err(format!("unknown source format `{other}` (expected tact, calendar, or qmsum)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("could not read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record `{id}`: {message}")]
    Record { id: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Standing query used for calendar records that carry no question of their
/// own: the release poses one fixed scheduling task per instance.
pub const CALENDAR_DEFAULT_QUERY: &str =
    "Find a meeting time that works for every participant, given their schedules.";

/// Convert a raw release file into the canonical format; returns how many
/// instances were written. Output is loadable by [`load_dataset`].
///
/// Expected input layouts (JSON Lines in every case):
///
/// * `tact` — one question per line:
///   `{"id"?, "question", "context", "answer" | "answers": [..],
///   "table"?: {"columns": [..], "rows": [[cell, ..], ..]}}`.
///   Missing ids become `tact-NNNN` from the line number. A `table` is
///   carried into `gold_table` with columns as slots.
/// * `calendar` — one scheduling problem per line:
///   `{"id"?, "context" | "schedules", "question"?, "answer" | "golden_answer"}`.
///   Records without a question get [`CALENDAR_DEFAULT_QUERY`]. The answer
///   string is kept exactly as released (its time-range convention is the
///   grading target).
/// * `qmsum` — one meeting per line:
///   `{"meeting_id"?, "meeting_transcripts": [{"speaker", "content"}, ..],
///   "general_query_list": [{"query", "answer"}, ..],
///   "specific_query_list": [{"query", "answer"}, ..]}`.
///   Each query becomes its own instance, ids suffixed `-gN` / `-sN` by list
///   position; the transcript is flattened to one `SPEAKER: utterance` line
///   per turn.
pub fn adapt(
    format: SourceFormat,
    input: &Path,
    output: &Path,
) -> Result<usize, AdapterError> {
    let raw = fs::read_to_string(input).map_err(|e| AdapterError::Io {
        path: input.display().to_string(),
        message: e.to_string(),
    })?;
    let instances = match format {
        SourceFormat::Tact => adapt_tact(&raw)?,
        SourceFormat::Calendar => adapt_calendar(&raw)?,
        SourceFormat::Qmsum => adapt_qmsum(&raw)?,
    };
    // Round-trip guarantee: everything we emit must satisfy the canonical
    // validator (unique ids, nonempty fields) before it hits disk.
    let mut seen = BTreeSet::new();
    for inst in &instances {
        if !seen.insert(inst.id.clone()) {
            return Err(AdapterError::Record {
                id: inst.id.clone(),
                message: "duplicate id in source".to_string(),
            });
        }
    }
    write_dataset(output, &instances)?;
    Ok(instances.len())
}

fn source_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            None
        } else {
            Some((i + 1, trimmed))
        }
    })
}

fn parse_line(line_no: usize, line: &str) -> Result<serde_json::Value, AdapterError> {
    serde_json::from_str(line).map_err(|e| AdapterError::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

fn field_str(value: &serde_json::Value, key: &str) -> Option<String> {
    value.get(key).and_then(|v| v.as_str()).map(str::to_string)
}

fn require_nonempty(
    id: &str,
    what: &str,
    value: Option<String>,
) -> Result<String, AdapterError> {
    match value {
        Some(s) if !s.trim().is_empty() => Ok(s),
        _ => Err(AdapterError::Record { id: id.to_string(), message: format!("missing {what}") }),
    }
}

fn adapt_tact(raw: &str) -> Result<Vec<TaskInstance>, AdapterError> {
    let mut instances = Vec::new();
    for (line_no, line) in source_lines(raw) {
        let value = parse_line(line_no, line)?;
        let id = field_str(&value, "id").unwrap_or_else(|| format!("tact-{line_no:04}"));
        let query = require_nonempty(&id, "question", field_str(&value, "question"))?;
        let text = require_nonempty(&id, "context", field_str(&value, "context"))?;
        let golds = match value.get("answers").and_then(|v| v.as_array()) {
            Some(list) => list.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
            None => vec![require_nonempty(&id, "answer", field_str(&value, "answer"))?],
        };
        if golds.is_empty() {
            return Err(AdapterError::Record { id, message: "empty answers list".to_string() });
        }
        let gold_table = match value.get("table") {
            None => None,
            Some(table) => Some(tact_table(&id, table)?),
        };
        instances.push(TaskInstance {
            id,
            family: Family::Qa,
            query,
            text,
            golds,
            gold_schema: None,
            gold_table,
        });
    }
    Ok(instances)
}

fn tact_table(id: &str, table: &serde_json::Value) -> Result<GoldTable, AdapterError> {
    let bad = |message: &str| AdapterError::Record { id: id.to_string(), message: message.to_string() };
    let columns = table
        .get("columns")
        .and_then(|v| v.as_array())
        .ok_or_else(|| bad("table without columns array"))?;
    let slots: Vec<String> = columns
        .iter()
        .map(|c| c.as_str().map(str::to_string).ok_or_else(|| bad("non-string column name")))
        .collect::<Result<_, _>>()?;
    let raw_rows = table
        .get("rows")
        .and_then(|v| v.as_array())
        .ok_or_else(|| bad("table without rows array"))?;
    let mut rows = Vec::new();
    for raw_row in raw_rows {
        let cells = raw_row.as_array().ok_or_else(|| bad("table row is not an array"))?;
        if cells.len() != slots.len() {
            return Err(bad("table row width differs from column count"));
        }
        rows.push(cells.iter().map(json_cell).collect());
    }
    Ok(GoldTable { slots, rows })
}

fn json_cell(value: &serde_json::Value) -> CellValue {
    match value {
        serde_json::Value::Null => CellValue::Null,
        serde_json::Value::Bool(b) => CellValue::Boolean(*b),
        serde_json::Value::Number(n) => CellValue::Number(n.as_f64().unwrap_or(0.0)),
        serde_json::Value::String(s) => CellValue::Text(s.clone()),
        other => CellValue::Text(other.to_string()),
    }
}

fn adapt_calendar(raw: &str) -> Result<Vec<TaskInstance>, AdapterError> {
    let mut instances = Vec::new();
    for (line_no, line) in source_lines(raw) {
        let value = parse_line(line_no, line)?;
        let id = field_str(&value, "id").unwrap_or_else(|| format!("calendar-{line_no:04}"));
        let text = require_nonempty(
            &id,
            "context/schedules",
            field_str(&value, "context").or_else(|| field_str(&value, "schedules")),
        )?;
        let query = field_str(&value, "question")
            .filter(|q| !q.trim().is_empty())
            .unwrap_or_else(|| CALENDAR_DEFAULT_QUERY.to_string());
        let gold = require_nonempty(
            &id,
            "answer",
            field_str(&value, "answer").or_else(|| field_str(&value, "golden_answer")),
        )?;
        instances.push(TaskInstance {
            id,
            family: Family::Planning,
            query,
            text,
            golds: vec![gold],
            gold_schema: None,
            gold_table: None,
        });
    }
    Ok(instances)
}

fn adapt_qmsum(raw: &str) -> Result<Vec<TaskInstance>, AdapterError> {
    let mut instances = Vec::new();
    for (line_no, line) in source_lines(raw) {
        let value = parse_line(line_no, line)?;
        let base_id =
            field_str(&value, "meeting_id").unwrap_or_else(|| format!("qmsum-{line_no:04}"));
        let turns = value
            .get("meeting_transcripts")
            .and_then(|v| v.as_array())
            .ok_or_else(|| AdapterError::Record {
                id: base_id.clone(),
                message: "missing meeting_transcripts".to_string(),
            })?;
        let mut lines = Vec::new();
        for turn in turns {
            let speaker = turn.get("speaker").and_then(|v| v.as_str()).unwrap_or("UNKNOWN");
            let content = turn.get("content").and_then(|v| v.as_str()).unwrap_or("");
            if !content.trim().is_empty() {
                lines.push(format!("{speaker}: {content}"));
            }
        }
        let text = lines.join("\n");
        if text.is_empty() {
            return Err(AdapterError::Record {
                id: base_id,
                message: "transcript has no usable turns".to_string(),
            });
        }
        for (list_key, suffix) in [("general_query_list", 'g'), ("specific_query_list", 's')] {
            let Some(queries) = value.get(list_key).and_then(|v| v.as_array()) else {
                continue;
            };
            for (index, entry) in queries.iter().enumerate() {
                let id = format!("{base_id}-{suffix}{index}");
                let query = require_nonempty(&id, "query", field_str(entry, "query"))?;
                let answer = require_nonempty(&id, "answer", field_str(entry, "answer"))?;
                instances.push(TaskInstance {
                    id,
                    family: Family::Summarization,
                    query,
                    text: text.clone(),
                    golds: vec![answer],
                    gold_schema: None,
                    gold_table: None,
                });
            }
        }
    }
    Ok(instances)
}
