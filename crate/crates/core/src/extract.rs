//! Schema-guided extraction: run the extraction prompt over document chunks
//! (optionally in parallel, optionally narrowed by a seek focus) and assemble
//! a deduplicated, capped record set. Also the single-call monolithic variant
//! that asks for schema and rows at once, used for ablation runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::chunk::{chunk_text, Chunk, ChunkError, ChunkingOptions};
use crate::gateway::{Gateway, GatewayError, ModelProfile};
use crate::prompts::{call_with_repair, PromptSet};
use crate::record::{dedupe_rows, parse_records, RecordRow, RecordSet};
use crate::schema::{
    json_array_candidates, parse_schema, ExtractionSchema, SchemaOrigin, SchemaSlot,
};

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub chunking: ChunkingOptions,
    /// Row cap applied after dedupe; overflow is dropped with a warning.
    pub max_rows: usize,
    /// Worker threads for per-chunk calls; 1 = sequential.
    pub parallel_chunks: usize,
    /// Budget for schema slots the model may invent during extraction.
    /// 0 disables schema growth entirely.
    pub allow_extra_slots: usize,
    pub repair_retries: usize,
    pub max_slots: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            chunking: ChunkingOptions::default(),
            max_rows: 50,
            parallel_chunks: 1,
            allow_extra_slots: 0,
            repair_retries: 2,
            max_slots: crate::schema::DEFAULT_MAX_SLOTS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Chunking(#[from] ChunkError),
    #[error("monolithic extraction produced no parseable schema: {0}")]
    MonolithicSchema(String),
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub records: RecordSet,
    /// Raw model output per chunk, in chunk order (empty string for chunks
    /// whose call failed outright).
    pub chunk_outputs: Vec<String>,
    pub warnings: Vec<String>,
}

struct ChunkResult {
    rows: Vec<RecordRow>,
    extra_slots: Vec<SchemaSlot>,
    raw_output: String,
    warnings: Vec<String>,
}

fn extract_chunk(
    query: &str,
    schema_rendering: &str,
    schema: &ExtractionSchema,
    chunk: &Chunk,
    focus: Option<&str>,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    opts: &ExtractOptions,
) -> Result<ChunkResult, GatewayError> {
    let focus_line = match focus {
        Some(focus) => prompts.fill(&prompts.extraction_focus_line, &[("focus", focus)]),
        None => String::new(),
    };
    let user = prompts.fill(
        &prompts.extraction,
        &[
            ("query", query),
            ("schema", schema_rendering),
            ("focus_line", &focus_line),
            ("chunk", &chunk.text),
        ],
    );
    let outcome = call_with_repair(
        gateway,
        profile,
        None,
        user,
        |_| prompts.records_repair.clone(),
        opts.repair_retries,
        |text| match parse_records(text, schema, opts.allow_extra_slots) {
            Ok(parsed) => Ok(((parsed.rows, parsed.extra_slots), parsed.warnings)),
            Err(e) => Err(e.to_string()),
        },
    )?;
    let mut warnings: Vec<String> =
        outcome.warnings.into_iter().map(|w| format!("chunk {}: {w}", chunk.index)).collect();
    let (mut rows, extra_slots) = match outcome.value {
        Some(v) => v,
        None => {
            warnings.push(format!(
                "chunk {}: extraction output never parsed; contributing 0 rows",
                chunk.index
            ));
            (Vec::new(), Vec::new())
        }
    };
    for row in &mut rows {
        row.source_chunk = Some(chunk.index);
    }
    Ok(ChunkResult { rows, extra_slots, raw_output: outcome.last_output, warnings })
}

/// Run schema-guided extraction over the whole document. A failed chunk
/// degrades to zero rows; only transport-level errors abort.
pub fn extract(
    query: &str,
    schema: &ExtractionSchema,
    text: &str,
    focus: Option<&str>,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    opts: &ExtractOptions,
) -> Result<Extraction, ExtractError> {
    let chunks = chunk_text(text, &opts.chunking)?;
    let schema_rendering = crate::schema::render_schema(schema);

    let results: Vec<Option<Result<ChunkResult, GatewayError>>> = if opts.parallel_chunks <= 1 {
        chunks
            .iter()
            .map(|chunk| {
                Some(extract_chunk(
                    query, &schema_rendering, schema, chunk, focus, gateway, profile, prompts,
                    opts,
                ))
            })
            .collect()
    } else {
        let slots: Vec<Mutex<Option<Result<ChunkResult, GatewayError>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..opts.parallel_chunks.min(chunks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let result = extract_chunk(
                        query,
                        &schema_rendering,
                        schema,
                        &chunks[i],
                        focus,
                        gateway,
                        profile,
                        prompts,
                        opts,
                    );
                    *slots[i].lock().expect("chunk slot lock poisoned") = Some(result);
                });
            }
        });
        slots.into_iter().map(|slot| slot.into_inner().expect("slot lock poisoned")).collect()
    };

    let mut warnings = Vec::new();
    let mut chunk_outputs = Vec::with_capacity(chunks.len());
    let mut all_rows = Vec::new();
    let mut extra_slots: Vec<SchemaSlot> = Vec::new();
    for result in results {
        let result = result.expect("every chunk slot is filled");
        let chunk_result = result?; // first transport error (in chunk order) aborts
        chunk_outputs.push(chunk_result.raw_output);
        warnings.extend(chunk_result.warnings);
        for slot in chunk_result.extra_slots {
            if extra_slots.len() < opts.allow_extra_slots
                && !extra_slots.iter().any(|s| s.name == slot.name)
                && schema.slot(&slot.name).is_none()
            {
                extra_slots.push(slot);
            }
        }
        all_rows.extend(chunk_result.rows);
    }

    // Final schema: base plus any accepted discoveries (bounded by max_slots).
    let final_schema = if extra_slots.is_empty() {
        schema.clone()
    } else {
        let mut slots = schema.slots.clone();
        for slot in extra_slots {
            if slots.len() >= opts.max_slots {
                warnings.push(format!("discovered slot {} dropped: schema at capacity", slot.name));
                continue;
            }
            warnings.push(format!("schema extended with discovered slot {}", slot.name));
            slots.push(slot);
        }
        ExtractionSchema::new(slots, SchemaOrigin::FocusExtended)
    };

    // Conform every row to the final slot set, then dedupe and cap.
    for row in &mut all_rows {
        row.conform_to(&final_schema);
    }
    let mut rows = dedupe_rows(all_rows, &final_schema);
    if rows.len() > opts.max_rows {
        warnings.push(format!("dropped {} rows beyond the {} cap", rows.len() - opts.max_rows, opts.max_rows));
        rows.truncate(opts.max_rows);
    }

    let mut records = RecordSet::new(final_schema, rows);
    records.focus = focus.map(str::to_string);
    Ok(Extraction { records, chunk_outputs, warnings })
}

#[derive(Debug, Clone)]
pub struct MonolithicExtraction {
    pub records: RecordSet,
    pub raw_output: String,
    pub warnings: Vec<String>,
}

/// Single-call ablation: no chunking, no focus, schema and rows from one
/// response. The schema must parse (after repairs) or this errors; missing
/// rows degrade to an empty table with a warning.
pub fn extract_monolithic(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    opts: &ExtractOptions,
) -> Result<MonolithicExtraction, ExtractError> {
    let user = prompts.fill(&prompts.extraction_monolithic, &[("query", query), ("text", text)]);

    type Parsed = (Vec<SchemaSlot>, Vec<RecordRow>, bool);
    let outcome = call_with_repair(
        gateway,
        profile,
        None,
        user,
        |_| prompts.monolithic_repair.clone(),
        opts.repair_retries,
        |response: &str| -> Result<(Parsed, Vec<String>), String> {
            // First array that yields slots is the schema; the first row
            // table after it is the data.
            let candidates = json_array_candidates(response);
            let mut schema_end = None;
            let mut slots = None;
            let mut warnings = Vec::new();
            for (value, range) in &candidates {
                let elements = value.as_array().expect("candidate is an array");
                let rendered = serde_json::to_string(elements).expect("reserialize");
                if let Ok((parsed, mut w)) = parse_schema(&rendered, opts.max_slots) {
                    slots = Some(parsed);
                    warnings.append(&mut w);
                    schema_end = Some(range.end);
                    break;
                }
            }
            let Some(slots) = slots else {
                return Err("no schema array found".to_string());
            };
            let schema = ExtractionSchema::new(slots.clone(), SchemaOrigin::Induced);
            let schema_end = schema_end.unwrap_or(0);
            let mut rows = None;
            for (value, range) in &candidates {
                if range.start < schema_end {
                    continue;
                }
                let elements = value.as_array().expect("candidate is an array");
                if elements.is_empty() || elements.iter().any(|e| e.is_object()) {
                    let rendered = serde_json::to_string(elements).expect("reserialize");
                    if let Ok(parsed) = parse_records(&rendered, &schema, 0) {
                        warnings.extend(parsed.warnings);
                        rows = Some(parsed.rows);
                        break;
                    }
                }
            }
            let had_rows = rows.is_some();
            if !had_rows {
                warnings.push("monolithic output had a schema but no row table; starting empty".to_string());
            }
            Ok(((slots, rows.unwrap_or_default(), had_rows), warnings))
        },
    )?;

    let mut warnings = outcome.warnings;
    match outcome.value {
        Some((slots, mut rows, _had_rows)) => {
            let schema = ExtractionSchema::new(slots, SchemaOrigin::Induced);
            for row in &mut rows {
                row.conform_to(&schema);
            }
            let mut rows = dedupe_rows(rows, &schema);
            if rows.len() > opts.max_rows {
                warnings.push(format!(
                    "dropped {} rows beyond the {} cap",
                    rows.len() - opts.max_rows,
                    opts.max_rows
                ));
                rows.truncate(opts.max_rows);
            }
            Ok(MonolithicExtraction {
                records: RecordSet::new(schema, rows),
                raw_output: outcome.last_output,
                warnings,
            })
        }
        None => Err(ExtractError::MonolithicSchema(format!(
            "last output: {}",
            truncate_for_error(&outcome.last_output)
        ))),
    }
}

fn truncate_for_error(text: &str) -> String {
    if text.chars().count() > 120 {
        let head: String = text.chars().take(120).collect();
        format!("{head}…")
    } else {
        text.to_string()
    }
}
