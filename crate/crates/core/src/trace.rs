//! Run traces: the auditable, replayable record of every run.
//!
//! A trace file is JSONL — a header line with run metadata, then one line per
//! step record. The validator re-checks everything a finished trace promises:
//! the per-method phase grammar, digest/rendering agreement, the
//! ablation-mode digest freeze, and termination bookkeeping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Iecache,
    Generic,
    Cot,
    React,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Iecache => "iecache",
            Method::Generic => "generic",
            Method::Cot => "cot",
            Method::React => "react",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iecache" => Ok(Method::Iecache),
            "generic" => Ok(Method::Generic),
            "cot" => Ok(Method::Cot),
            "react" => Ok(Method::React),
            other => Err(format!("unknown method {other:?} (iecache|generic|cot|react)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Schema,
    Extract,
    Reason,
    Update,
    Check,
    Final,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Final,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    /// Raw model output behind this record (chunk outputs joined for extract
    /// phases, empty for records that made no call).
    pub model_output: String,
    pub action: Option<Action>,
    /// Digest of `cache_rendering`; empty for methods that have no cache.
    pub cache_digest: String,
    pub cache_size: usize,
    pub cache_rendering: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub task_id: String,
    pub method: Method,
    pub steps: Vec<StepRecord>,
    pub answer: String,
    pub terminated_by: TerminatedBy,
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub task_id: String,
    pub method: Method,
    pub repeat: usize,
    pub update_enabled: bool,
    pub check_interval: usize,
    pub answer: String,
    pub terminated_by: TerminatedBy,
    /// Present when the run aborted; the steps are then a valid prefix only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace file is empty")]
    Empty,
}

pub fn to_jsonl(header: &TraceHeader, steps: &[StepRecord]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for step in steps {
        out.push_str(&serde_json::to_string(step).expect("step serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<(TraceHeader, Vec<StepRecord>), TraceError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or(TraceError::Empty)?;
    let header: TraceHeader = serde_json::from_str(header_line)
        .map_err(|e| TraceError::Parse { line: 1, message: format!("bad header: {e}") })?;
    let mut steps = Vec::new();
    for (idx, line) in lines {
        let step: StepRecord = serde_json::from_str(line)
            .map_err(|e| TraceError::Parse { line: idx + 1, message: e.to_string() })?;
        steps.push(step);
    }
    Ok((header, steps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Index into the step list (not the `step` field), when applicable.
    pub record: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.record {
            Some(i) => write!(f, "record {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn violation(record: Option<usize>, message: impl Into<String>) -> Violation {
    Violation { record, message: message.into() }
}

/// Phase-grammar states for the cache loop:
/// `schema extract (reason extract update check?)* (final | fallback)`.
#[derive(Clone, Copy, PartialEq)]
enum LoopState {
    AwaitSchema,
    AwaitExtract,
    LoopHead,
    AfterReason,
    AfterSeekExtract,
    AfterUpdate,
    Done,
}

fn check_loop_grammar(steps: &[StepRecord], out: &mut Vec<Violation>) {
    let mut state = LoopState::AwaitSchema;
    for (i, step) in steps.iter().enumerate() {
        let next = match (state, step.phase) {
            (LoopState::AwaitSchema, Phase::Schema) => LoopState::AwaitExtract,
            (LoopState::AwaitExtract, Phase::Extract) => LoopState::LoopHead,
            (LoopState::LoopHead | LoopState::AfterUpdate, Phase::Reason) => {
                LoopState::AfterReason
            }
            (LoopState::LoopHead | LoopState::AfterUpdate, Phase::Final | Phase::Fallback) => {
                LoopState::Done
            }
            (LoopState::AfterReason, Phase::Extract) => LoopState::AfterSeekExtract,
            (LoopState::AfterSeekExtract, Phase::Update) => LoopState::AfterUpdate,
            (LoopState::AfterUpdate, Phase::Check) => LoopState::LoopHead,
            (LoopState::Done, phase) => {
                out.push(violation(Some(i), format!("{phase:?} after the terminal record")));
                continue;
            }
            (_, phase) => {
                out.push(violation(Some(i), format!("phase {phase:?} breaks the loop grammar")));
                continue;
            }
        };
        state = next;
    }
    if state != LoopState::Done {
        out.push(violation(None, "trace does not end in a final or fallback record"));
    }
}

fn check_react_grammar(steps: &[StepRecord], out: &mut Vec<Violation>) {
    for (i, step) in steps.iter().enumerate() {
        let terminal = i + 1 == steps.len();
        match step.phase {
            Phase::Reason if !terminal => {}
            Phase::Final | Phase::Fallback if terminal => {}
            Phase::Reason => {
                out.push(violation(Some(i), "trace ends on a reason record"));
            }
            phase => out.push(violation(
                Some(i),
                format!("phase {phase:?} is not in the react grammar (reason* final|fallback)"),
            )),
        }
    }
    if steps.is_empty() {
        out.push(violation(None, "react trace has no records"));
    }
}

fn check_single_shot_grammar(steps: &[StepRecord], method: Method, out: &mut Vec<Violation>) {
    if steps.len() != 1 || steps[0].phase != Phase::Final {
        out.push(violation(
            None,
            format!("{method} trace must be exactly one final record, found {} records", steps.len()),
        ));
    }
}

/// Re-derive everything checkable from a finished trace. Aborted runs
/// (header.error set) only get digest checks: their shape is a prefix.
pub fn validate(header: &TraceHeader, steps: &[StepRecord]) -> Vec<Violation> {
    let mut out = Vec::new();

    // Digests must match renderings wherever a digest is recorded.
    for (i, step) in steps.iter().enumerate() {
        if step.cache_digest.is_empty() {
            continue;
        }
        let expect = {
            use sha2::{Digest, Sha256};
            let mut hasher = Sha256::new();
            hasher.update(step.cache_rendering.as_bytes());
            hex::encode(hasher.finalize())
        };
        if step.cache_digest != expect {
            out.push(violation(Some(i), "cache_digest does not match cache_rendering"));
        }
    }

    if header.error.is_some() {
        return out;
    }

    match header.method {
        Method::Iecache => check_loop_grammar(steps, &mut out),
        Method::React => check_react_grammar(steps, &mut out),
        Method::Generic | Method::Cot => check_single_shot_grammar(steps, header.method, &mut out),
    }

    if let Some(last) = steps.last() {
        let expected = match last.phase {
            Phase::Final => Some(TerminatedBy::Final),
            Phase::Fallback => Some(TerminatedBy::StepLimit),
            _ => None,
        };
        match expected {
            Some(expected) if expected != header.terminated_by => {
                out.push(violation(
                    None,
                    format!(
                        "terminated_by says {:?} but the last record is {:?}",
                        header.terminated_by, last.phase
                    ),
                ));
            }
            _ => {}
        }
        if last.phase == Phase::Final {
            if let Some(Action::Final { answer }) = &last.action {
                if answer != &header.answer {
                    out.push(violation(
                        None,
                        "header answer differs from the final record's action",
                    ));
                }
            } else {
                out.push(violation(None, "final record carries no Final action"));
            }
        }
    } else {
        out.push(violation(None, "trace has no step records"));
    }

    // Ablation freeze: with updates disabled the cache digest never moves
    // after the first extract record establishes it.
    if header.method == Method::Iecache && !header.update_enabled {
        if let Some(first_extract) =
            steps.iter().position(|s| s.phase == Phase::Extract)
        {
            let frozen = &steps[first_extract].cache_digest;
            for (i, step) in steps.iter().enumerate().skip(first_extract) {
                if !step.cache_digest.is_empty() && step.cache_digest != *frozen {
                    out.push(violation(
                        Some(i),
                        "cache digest changed although updates are disabled",
                    ));
                }
            }
        }
    }

    out
}
