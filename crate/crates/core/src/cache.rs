//! The working-memory table: bounded, deduplicated, provenance-tagged rows
//! with a content digest over the canonical rendering.
//!
//! The cache is the only state the reasoning loop carries between steps.
//! Maintenance (merging new evidence, pruning stale rows) is delegated to a
//! single model call whose output is then re-disciplined mechanically:
//! whatever the model returns, the stored table is deduplicated, capped, and
//! provenance-correct, and the digest always matches the current rendering.

use std::collections::HashMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::gateway::{Gateway, GatewayError, ModelProfile};
use crate::prompts::{call_with_repair, PromptSet};
use crate::record::{normalize_row, RecordRow, RecordSet};
use crate::schema::ExtractionSchema;

pub const DEFAULT_CAPACITY: usize = 50;

/// How a row got into the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    /// From the initial extraction pass.
    Init,
    /// Arrived via the update after the seek at `step`.
    Seek { step: usize },
    /// Introduced or rewritten by the self-check at `step`.
    Check { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub row: RecordRow,
    pub provenance: Provenance,
    /// Loop step at which the row entered the cache (0 = initialization).
    pub added_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    schema: ExtractionSchema,
    entries: Vec<CacheEntry>,
    digest: String,
    capacity: usize,
}

/// Result of a model-mediated maintenance call (update or self-check).
#[derive(Debug)]
pub struct MaintenanceOutcome {
    pub cache: Cache,
    /// Raw model output (empty when no call was made).
    pub model_output: String,
    pub warnings: Vec<String>,
    /// True when the model output never parsed and a mechanical policy was
    /// applied instead.
    pub degraded: bool,
}

fn digest_of(rendering: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(rendering.as_bytes());
    hex::encode(hasher.finalize())
}

fn escape_cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', "\\n")
}

/// Keep at most `capacity` entries: evict the lowest `added_step` first and,
/// among ties, the last-positioned entry. With uniform steps this keeps the
/// head of the list, which is also the init-truncation rule.
fn evict_to_capacity(entries: &mut Vec<CacheEntry>, capacity: usize) -> usize {
    let mut evicted = 0;
    while entries.len() > capacity {
        let oldest = entries.iter().map(|e| e.added_step).min().expect("nonempty");
        let pos = entries
            .iter()
            .rposition(|e| e.added_step == oldest)
            .expect("an entry with the minimum step exists");
        entries.remove(pos);
        evicted += 1;
    }
    evicted
}

impl Cache {
    pub fn empty(schema: ExtractionSchema, capacity: usize) -> Self {
        let mut cache = Cache { schema, entries: Vec::new(), digest: String::new(), capacity };
        cache.refresh_digest();
        cache
    }

    /// Build the cache from the initial extraction: dedupe (the extractor
    /// already did, but the cache re-guarantees it), cap, tag as Init.
    pub fn initialize(records: &RecordSet, capacity: usize) -> (Self, Vec<String>) {
        let mut warnings = Vec::new();
        let entries: Vec<CacheEntry> = records
            .rows
            .iter()
            .map(|row| CacheEntry { row: row.clone(), provenance: Provenance::Init, added_step: 0 })
            .collect();
        let mut cache =
            Cache { schema: records.schema.clone(), entries, digest: String::new(), capacity };
        let dropped = cache.discipline();
        if dropped.deduped > 0 {
            warnings.push(format!("init dropped {} duplicate rows", dropped.deduped));
        }
        if dropped.evicted > 0 {
            warnings.push(format!(
                "init dropped {} rows beyond the {capacity}-row capacity",
                dropped.evicted
            ));
        }
        (cache, warnings)
    }

    pub fn schema(&self) -> &ExtractionSchema {
        &self.schema
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// The rows as a record set (used for final-answer metrics).
    pub fn to_record_set(&self) -> RecordSet {
        RecordSet::new(self.schema.clone(), self.entries.iter().map(|e| e.row.clone()).collect())
    }

    /// Pipe-separated table: header of slot names, one line per row, cells
    /// with `|` and newlines escaped. An empty cache is just the header.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.entries.len() + 1);
        lines.push(
            self.schema
                .slots
                .iter()
                .map(|s| escape_cell(&s.name))
                .collect::<Vec<_>>()
                .join("|"),
        );
        for entry in &self.entries {
            lines.push(
                self.schema
                    .slots
                    .iter()
                    .map(|slot| escape_cell(&entry.row.get(&slot.name).display_text()))
                    .collect::<Vec<_>>()
                    .join("|"),
            );
        }
        lines.join("\n")
    }

    /// Rows as compact JSON (for maintenance prompts, which ask the model to
    /// return the same shape).
    pub fn rows_json(&self) -> String {
        let rows: Vec<&std::collections::BTreeMap<String, crate::record::CellValue>> =
            self.entries.iter().map(|e| &e.row.values).collect();
        serde_json::to_string(&rows).expect("rows serialize")
    }

    fn refresh_digest(&mut self) {
        self.digest = digest_of(&self.render());
    }

    /// Re-establish all structural invariants: rows conform to the schema,
    /// normalized keys are unique (first wins), size ≤ capacity, digest fresh.
    fn discipline(&mut self) -> DisciplineStats {
        for entry in &mut self.entries {
            entry.row.conform_to(&self.schema);
        }
        let before = self.entries.len();
        let mut seen = std::collections::HashSet::new();
        self.entries.retain(|e| seen.insert(normalize_row(&e.row, &self.schema)));
        let deduped = before - self.entries.len();
        let evicted = evict_to_capacity(&mut self.entries, self.capacity);
        self.refresh_digest();
        DisciplineStats { deduped, evicted }
    }

    /// Swap in a wider schema (same rows, null-filled). Only meaningful when
    /// `wider` contains every current slot.
    pub fn widen_schema(&mut self, wider: &ExtractionSchema) {
        self.schema = wider.clone();
        self.discipline();
    }

    /// Validate every invariant; test support. Returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.entries.len() > self.capacity {
            return Err(format!("{} entries over capacity {}", self.entries.len(), self.capacity));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            let key = normalize_row(&entry.row, &self.schema);
            if !seen.insert(key) {
                return Err(format!("duplicate normalized key at entry {i}"));
            }
            for slot in &self.schema.slots {
                if !entry.row.values.contains_key(&slot.name) {
                    return Err(format!("entry {i} missing slot {}", slot.name));
                }
            }
            for key in entry.row.values.keys() {
                if self.schema.slot(key).is_none() {
                    return Err(format!("entry {i} has off-schema key {key}"));
                }
            }
        }
        if self.digest != digest_of(&self.render()) {
            return Err("digest does not match rendering".to_string());
        }
        Ok(())
    }
}

struct DisciplineStats {
    deduped: usize,
    evicted: usize,
}

/// Merge newly extracted rows into the cache with one model call, then
/// mechanically re-discipline the result. Rows surviving from the old cache
/// keep their provenance and age; rows the model introduced are tagged
/// `Seek{step}`. If the model output never parses, fall back to a mechanical
/// merge (old rows first, then new, dedupe, cap).
pub fn update_cache(
    query: &str,
    cache: &Cache,
    new_records: &RecordSet,
    step: usize,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    repair_retries: usize,
) -> Result<MaintenanceOutcome, GatewayError> {
    let mut warnings = Vec::new();

    // Adopt a widened schema when extraction discovered new slots.
    let target_schema = if new_records.schema.slots.len() > cache.schema.slots.len()
        && cache.schema.is_proper_subset_of(&new_records.schema)
    {
        new_records.schema.clone()
    } else if new_records.schema != cache.schema
        && new_records.schema.slot_names() != cache.schema.slot_names()
    {
        warnings.push("new records carry an incompatible schema; keeping the cache schema".to_string());
        cache.schema.clone()
    } else {
        cache.schema.clone()
    };

    // Remember where each existing row came from, keyed by normalized form
    // under the target schema (first occurrence wins).
    let mut lineage: HashMap<String, (Provenance, usize)> = HashMap::new();
    for entry in cache.entries() {
        let mut row = entry.row.clone();
        row.conform_to(&target_schema);
        lineage
            .entry(normalize_row(&row, &target_schema))
            .or_insert((entry.provenance, entry.added_step));
    }

    let new_rows_json = {
        let rows: Vec<&std::collections::BTreeMap<String, crate::record::CellValue>> =
            new_records.rows.iter().map(|r| &r.values).collect();
        serde_json::to_string(&rows).expect("rows serialize")
    };
    let user = prompts.fill(
        &prompts.update,
        &[
            ("query", query),
            ("cache_rows", &cache.rows_json()),
            ("new_rows", &new_rows_json),
        ],
    );
    let outcome = call_with_repair(
        gateway,
        profile,
        None,
        user,
        |_| prompts.records_repair.clone(),
        repair_retries,
        |text| match crate::record::parse_records(text, &target_schema, 0) {
            Ok(parsed) => Ok((parsed.rows, parsed.warnings)),
            Err(e) => Err(e.to_string()),
        },
    )?;
    warnings.extend(outcome.warnings);

    let (rows, degraded) = match outcome.value {
        Some(rows) => (rows, false),
        None => {
            warnings.push(
                "update output never parsed; applied mechanical merge (old rows then new)"
                    .to_string(),
            );
            let mut rows: Vec<RecordRow> =
                cache.entries().iter().map(|e| e.row.clone()).collect();
            rows.extend(new_records.rows.iter().cloned());
            (rows, true)
        }
    };

    let entries: Vec<CacheEntry> = rows
        .into_iter()
        .map(|mut row| {
            row.conform_to(&target_schema);
            let key = normalize_row(&row, &target_schema);
            let (provenance, added_step) = lineage
                .get(&key)
                .copied()
                .unwrap_or((Provenance::Seek { step }, step));
            CacheEntry { row, provenance, added_step }
        })
        .collect();
    let mut next =
        Cache { schema: target_schema, entries, digest: String::new(), capacity: cache.capacity };
    let stats = next.discipline();
    if stats.deduped > 0 {
        warnings.push(format!("update dropped {} duplicate rows", stats.deduped));
    }
    if stats.evicted > 0 {
        warnings.push(format!("update evicted {} rows beyond capacity", stats.evicted));
    }
    Ok(MaintenanceOutcome { cache: next, model_output: outcome.last_output, warnings, degraded })
}

/// Optional audit pass: one call, no repair retries. An unparseable reply
/// leaves the cache untouched (with a warning) — the check is advisory.
pub fn self_check(
    query: &str,
    cache: &Cache,
    reasoning: &str,
    step: usize,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
) -> Result<MaintenanceOutcome, GatewayError> {
    let user = prompts.fill(
        &prompts.check,
        &[("query", query), ("cache_rows", &cache.rows_json()), ("reasoning", reasoning)],
    );
    let outcome = call_with_repair(
        gateway,
        profile,
        None,
        user,
        |_| prompts.records_repair.clone(),
        0,
        |text| match crate::record::parse_records(text, cache.schema(), 0) {
            Ok(parsed) => Ok((parsed.rows, parsed.warnings)),
            Err(e) => Err(e.to_string()),
        },
    )?;
    let mut warnings = outcome.warnings;
    match outcome.value {
        Some(rows) => {
            let mut lineage: HashMap<String, (Provenance, usize)> = HashMap::new();
            for entry in cache.entries() {
                lineage
                    .entry(normalize_row(&entry.row, cache.schema()))
                    .or_insert((entry.provenance, entry.added_step));
            }
            let entries: Vec<CacheEntry> = rows
                .into_iter()
                .map(|mut row| {
                    row.conform_to(cache.schema());
                    let key = normalize_row(&row, cache.schema());
                    let (provenance, added_step) = lineage
                        .get(&key)
                        .copied()
                        .unwrap_or((Provenance::Check { step }, step));
                    CacheEntry { row, provenance, added_step }
                })
                .collect();
            let mut next = Cache {
                schema: cache.schema().clone(),
                entries,
                digest: String::new(),
                capacity: cache.capacity,
            };
            let stats = next.discipline();
            if stats.deduped > 0 {
                warnings.push(format!("check dropped {} duplicate rows", stats.deduped));
            }
            if stats.evicted > 0 {
                warnings.push(format!("check evicted {} rows beyond capacity", stats.evicted));
            }
            Ok(MaintenanceOutcome {
                cache: next,
                model_output: outcome.last_output,
                warnings,
                degraded: false,
            })
        }
        None => {
            warnings.push("self-check output did not parse; cache left unchanged".to_string());
            Ok(MaintenanceOutcome {
                cache: cache.clone(),
                model_output: outcome.last_output,
                warnings,
                degraded: true,
            })
        }
    }
}
