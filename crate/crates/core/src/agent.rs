//! The cache-centered reasoning loop.
//!
//! One run: induce (or accept) a schema, extract an initial record table,
//! initialize the cache, then iterate — reason over the rendered cache, either
//! answer (`<final>`) or seek more evidence (`<seek>`), fold seek results into
//! the cache with one maintenance call, optionally audit it — until an answer
//! or the step limit, where a fallback call answers from the cache alone.
//!
//! Parse failures never abort a run: schemas degrade to a minimal fallback,
//! malformed directives degrade to a seek, failed updates merge mechanically.
//! Only transport-level failures abort, and those persist a partial trace.

use crate::action::{parse_action, Action};
use crate::cache::{self, Cache};
use crate::extract::{extract, extract_monolithic, ExtractError, ExtractOptions, Extraction};
use crate::gateway::{ChatRequest, Gateway, Message, ModelProfile};
use crate::prompts::{call_with_repair, PromptSet};
use crate::record::RecordSet;
use crate::schema::{induce_schema, ExtractionSchema, InduceError, SchemaOrigin};
use crate::trace::{Phase, StepRecord, TerminatedBy};

/// Focus used when a degraded seek has no usable reasoning to quote.
pub const DEGRADED_FOCUS: &str = "additional relevant information";

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Step limit H: maximum reasoning cycles before the fallback answer.
    pub max_steps: usize,
    /// The w/o-update ablation sets this false: seeks still extract, but the
    /// cache is frozen after initialization (no update or check calls).
    pub update_enabled: bool,
    /// Self-check every K seek cycles; 0 disables the check entirely.
    pub check_interval: usize,
    /// Repair calls allowed per malformed model output.
    pub repair_retries: usize,
    /// Single-call ablation: schema and rows from one un-chunked request.
    pub monolithic: bool,
    /// Curated schema that skips induction when present.
    pub gold_schema: Option<ExtractionSchema>,
    pub extract: ExtractOptions,
    /// Cache row capacity.
    pub capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_steps: 8,
            update_enabled: true,
            check_interval: 0,
            repair_retries: 2,
            monolithic: false,
            gold_schema: None,
            extract: ExtractOptions::default(),
            capacity: cache::DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug)]
pub struct RunSuccess {
    pub answer: String,
    pub steps: Vec<StepRecord>,
    pub terminated_by: TerminatedBy,
    /// The cache at termination; `None` for methods that have no cache.
    pub final_cache: Option<Cache>,
}

#[derive(Debug)]
pub struct RunAbort {
    /// Valid prefix of the trace up to the failure.
    pub steps: Vec<StepRecord>,
    pub error: String,
}

#[derive(Debug)]
pub enum RunOutcome {
    Success(RunSuccess),
    Abort(RunAbort),
}

impl RunOutcome {
    pub fn success(&self) -> Option<&RunSuccess> {
        match self {
            RunOutcome::Success(s) => Some(s),
            RunOutcome::Abort(_) => None,
        }
    }
}

fn step_record(
    step: usize,
    phase: Phase,
    model_output: String,
    action: Option<Action>,
    cache: &Cache,
    warnings: Vec<String>,
) -> StepRecord {
    StepRecord {
        step,
        phase,
        model_output,
        action,
        cache_digest: cache.digest().to_string(),
        cache_size: cache.len(),
        cache_rendering: cache.render(),
        warnings,
    }
}

/// Degraded seek focus: the head of whatever the model did say.
fn degraded_focus(last_output: &str) -> String {
    let head: String = last_output.trim().chars().take(200).collect();
    let head = head.trim().to_string();
    if head.is_empty() {
        DEGRADED_FOCUS.to_string()
    } else {
        head
    }
}

pub fn run_iecache(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    config: &AgentConfig,
) -> RunOutcome {
    let mut steps = Vec::new();
    match run_loop(query, text, gateway, profile, prompts, config, &mut steps) {
        Ok((answer, terminated_by, final_cache)) => RunOutcome::Success(RunSuccess {
            answer,
            steps,
            terminated_by,
            final_cache: Some(final_cache),
        }),
        Err(error) => RunOutcome::Abort(RunAbort { steps, error }),
    }
}

fn run_loop(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    config: &AgentConfig,
    steps: &mut Vec<StepRecord>,
) -> Result<(String, TerminatedBy, Cache), String> {
    // ----- Step 0: schema, initial extraction, cache init -----
    let (schema, schema_output, schema_warnings, monolithic_records, mut extract_warnings) =
        acquire_schema(query, text, gateway, profile, prompts, config)?;

    let empty = Cache::empty(schema.clone(), config.capacity);
    steps.push(step_record(0, Phase::Schema, schema_output, None, &empty, schema_warnings));

    let (records, extract_output) = match monolithic_records {
        Some(records) => {
            extract_warnings.push("rows taken from the single monolithic call".to_string());
            (records, String::new())
        }
        None => {
            let extraction =
                run_extract(query, &schema, text, None, gateway, profile, prompts, config)?;
            extract_warnings.extend(extraction.warnings);
            (extraction.records, extraction.chunk_outputs.join("\n"))
        }
    };
    let (mut cache, init_warnings) = Cache::initialize(&records, config.capacity);
    extract_warnings.extend(init_warnings);
    steps.push(step_record(0, Phase::Extract, extract_output, None, &cache, extract_warnings));

    // ----- Reasoning cycles -----
    for t in 1..=config.max_steps {
        let cache_rendering = cache.render();
        let user =
            prompts.fill(&prompts.reason, &[("query", query), ("cache", &cache_rendering)]);
        let outcome = call_with_repair(
            gateway,
            profile,
            None,
            user,
            |_| prompts.reason_repair.clone(),
            config.repair_retries,
            |reply| parse_action(reply).map(|p| (p, vec![])).map_err(|e| e.to_string()),
        )
        .map_err(|e| e.to_string())?;
        let mut warnings = outcome.warnings;
        let (action, reasoning) = match outcome.value {
            Some(parsed) => (parsed.action, parsed.reasoning),
            None => {
                warnings.push(
                    "no usable directive after repairs; degraded to a seek".to_string(),
                );
                let reasoning = outcome.last_output.trim().to_string();
                (Action::Seek { focus: degraded_focus(&outcome.last_output) }, reasoning)
            }
        };
        let raw = outcome.last_output;

        match action {
            Action::Final { answer } => {
                steps.push(step_record(
                    t,
                    Phase::Final,
                    raw,
                    Some(Action::Final { answer: answer.clone() }),
                    &cache,
                    warnings,
                ));
                return Ok((answer, TerminatedBy::Final, cache));
            }
            Action::Seek { focus } => {
                steps.push(step_record(
                    t,
                    Phase::Reason,
                    raw,
                    Some(Action::Seek { focus: focus.clone() }),
                    &cache,
                    warnings,
                ));

                let extraction = run_extract(
                    query,
                    cache.schema(),
                    text,
                    Some(&focus),
                    gateway,
                    profile,
                    prompts,
                    config,
                )?;
                steps.push(step_record(
                    t,
                    Phase::Extract,
                    extraction.chunk_outputs.join("\n"),
                    None,
                    &cache,
                    extraction.warnings.clone(),
                ));

                if config.update_enabled {
                    let outcome = cache::update_cache(
                        query,
                        &cache,
                        &extraction.records,
                        t,
                        gateway,
                        profile,
                        prompts,
                        config.repair_retries,
                    )
                    .map_err(|e| e.to_string())?;
                    cache = outcome.cache;
                    steps.push(step_record(
                        t,
                        Phase::Update,
                        outcome.model_output,
                        None,
                        &cache,
                        outcome.warnings,
                    ));

                    if config.check_interval > 0 && t % config.check_interval == 0 {
                        let outcome = cache::self_check(
                            query, &cache, &reasoning, t, gateway, profile, prompts,
                        )
                        .map_err(|e| e.to_string())?;
                        cache = outcome.cache;
                        steps.push(step_record(
                            t,
                            Phase::Check,
                            outcome.model_output,
                            None,
                            &cache,
                            outcome.warnings,
                        ));
                    }
                } else {
                    // Ablation: record the (inert) update so the trace keeps
                    // its shape, but never touch the cache.
                    steps.push(step_record(
                        t,
                        Phase::Update,
                        String::new(),
                        None,
                        &cache,
                        vec!["updates disabled; cache left unchanged".to_string()],
                    ));
                }
            }
        }
    }

    // ----- Step limit: answer from the cache alone -----
    let user =
        prompts.fill(&prompts.fallback, &[("query", query), ("cache", &cache.render())]);
    let response = gateway
        .complete(&ChatRequest::new(vec![Message::user(user)], profile))
        .map_err(|e| e.to_string())?;
    let raw = response.content;
    // The fallback prompt asks for a bare answer, but accept a wrapped one.
    let answer = match parse_action(&raw) {
        Ok(parsed) => match parsed.action {
            Action::Final { answer } => answer,
            Action::Seek { .. } => raw.trim().to_string(),
        },
        Err(_) => raw.trim().to_string(),
    };
    steps.push(step_record(
        config.max_steps,
        Phase::Fallback,
        raw,
        None,
        &cache,
        vec!["step limit reached; answered from the cache".to_string()],
    ));
    Ok((answer, TerminatedBy::StepLimit, cache))
}

type SchemaAcquisition =
    (ExtractionSchema, String, Vec<String>, Option<RecordSet>, Vec<String>);

/// Produce the run's schema (gold / monolithic / induced), degrading to the
/// minimal fallback schema instead of aborting on parse failure.
fn acquire_schema(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    config: &AgentConfig,
) -> Result<SchemaAcquisition, String> {
    if let Some(gold) = &config.gold_schema {
        let mut gold = gold.clone();
        gold.origin = SchemaOrigin::Gold;
        return Ok((
            gold,
            String::new(),
            vec!["gold schema supplied; induction skipped".to_string()],
            None,
            Vec::new(),
        ));
    }
    if config.monolithic {
        return match extract_monolithic(query, text, gateway, profile, prompts, &config.extract)
        {
            Ok(m) => Ok((m.records.schema.clone(), m.raw_output, m.warnings, Some(m.records), Vec::new())),
            Err(ExtractError::Gateway(e)) => Err(e.to_string()),
            Err(ExtractError::Chunking(e)) => Err(e.to_string()),
            Err(ExtractError::MonolithicSchema(e)) => Ok((
                ExtractionSchema::minimal_fallback(),
                String::new(),
                vec![format!("monolithic schema never parsed ({e}); using the minimal fallback schema")],
                Some(RecordSet::empty(ExtractionSchema::minimal_fallback())),
                Vec::new(),
            )),
        };
    }
    match induce_schema(
        query,
        gateway,
        profile,
        prompts,
        config.extract.max_slots,
        config.repair_retries,
    ) {
        Ok(induced) => Ok((induced.schema, induced.raw_output, induced.warnings, None, Vec::new())),
        Err(InduceError::Gateway(e)) => Err(e.to_string()),
        Err(InduceError::Parse { last_output }) => Ok((
            ExtractionSchema::minimal_fallback(),
            last_output,
            vec!["schema induction never parsed; using the minimal fallback schema".to_string()],
            None,
            Vec::new(),
        )),
    }
}

fn run_extract(
    query: &str,
    schema: &ExtractionSchema,
    text: &str,
    focus: Option<&str>,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    config: &AgentConfig,
) -> Result<Extraction, String> {
    extract(query, schema, text, focus, gateway, profile, prompts, &config.extract)
        .map_err(|e| e.to_string())
}
