//! Prompt-only comparison methods: one-shot answering, chain-of-thought, and
//! a windowed ReAct loop. They share the trace vocabulary with the cache loop
//! (minus cache state) so one validator and one report pipeline cover all
//! methods.

use std::collections::BTreeSet;

use crate::action::{parse_react_action, Action, ReactAction};
use crate::agent::{RunAbort, RunOutcome, RunSuccess};
use crate::chunk::{chunk_text, ChunkingOptions};
use crate::gateway::{ChatRequest, Gateway, Message, ModelProfile};
use crate::prompts::{call_with_repair, PromptSet};
use crate::trace::{Phase, StepRecord, TerminatedBy};

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// ReAct read/answer cycles before the scratchpad fallback.
    pub react_max_steps: usize,
    /// Window size for ReAct reading (no overlap).
    pub react_window_tokens: usize,
    pub repair_retries: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { react_max_steps: 8, react_window_tokens: 3000, repair_retries: 2 }
    }
}

fn cacheless_record(
    step: usize,
    phase: Phase,
    model_output: String,
    action: Option<Action>,
    warnings: Vec<String>,
) -> StepRecord {
    StepRecord {
        step,
        phase,
        model_output,
        action,
        cache_digest: String::new(),
        cache_size: 0,
        cache_rendering: String::new(),
        warnings,
    }
}

fn single_call(
    gateway: &Gateway,
    profile: &ModelProfile,
    user: String,
) -> Result<String, String> {
    gateway
        .complete(&ChatRequest::new(vec![Message::user(user)], profile))
        .map(|r| r.content)
        .map_err(|e| e.to_string())
}

/// One call, whole document in the prompt, whole reply is the answer.
pub fn run_generic(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
) -> RunOutcome {
    let user = prompts.fill(&prompts.generic, &[("query", query), ("text", text)]);
    match single_call(gateway, profile, user) {
        Ok(raw) => {
            let answer = raw.trim().to_string();
            let record = cacheless_record(
                0,
                Phase::Final,
                raw,
                Some(Action::Final { answer: answer.clone() }),
                Vec::new(),
            );
            RunOutcome::Success(RunSuccess {
                answer,
                steps: vec![record],
                terminated_by: TerminatedBy::Final,
                final_cache: None,
            })
        }
        Err(error) => RunOutcome::Abort(RunAbort { steps: Vec::new(), error }),
    }
}

/// Everything from the last line that begins with `Answer:`; the whole output
/// when no such line exists.
pub fn extract_cot_answer(raw: &str) -> String {
    let mut last: Option<usize> = None;
    for (idx, _) in raw.match_indices("Answer:") {
        let at_line_start = idx == 0 || raw[..idx].ends_with('\n');
        if at_line_start {
            last = Some(idx);
        }
    }
    match last {
        Some(idx) => raw[idx + "Answer:".len()..].trim().to_string(),
        None => raw.trim().to_string(),
    }
}

/// One call with an explicit think-then-answer instruction; the answer is
/// pulled from the final `Answer:` line.
pub fn run_cot(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
) -> RunOutcome {
    let user = prompts.fill(&prompts.cot, &[("query", query), ("text", text)]);
    match single_call(gateway, profile, user) {
        Ok(raw) => {
            let answer = extract_cot_answer(&raw);
            let mut warnings = Vec::new();
            if !raw.contains("Answer:") {
                warnings.push("no Answer: line; whole output taken as the answer".to_string());
            }
            let record = cacheless_record(
                0,
                Phase::Final,
                raw,
                Some(Action::Final { answer: answer.clone() }),
                warnings,
            );
            RunOutcome::Success(RunSuccess {
                answer,
                steps: vec![record],
                terminated_by: TerminatedBy::Final,
                final_cache: None,
            })
        }
        Err(error) => RunOutcome::Abort(RunAbort { steps: Vec::new(), error }),
    }
}

/// Windowed ReAct: the model reads numbered windows on demand and finishes
/// with an answer; at the step limit a last call answers from the scratchpad.
pub fn run_react(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    config: &BaselineConfig,
) -> RunOutcome {
    let mut steps = Vec::new();
    match react_loop(query, text, gateway, profile, prompts, config, &mut steps) {
        Ok((answer, terminated_by)) => RunOutcome::Success(RunSuccess {
            answer,
            steps,
            terminated_by,
            final_cache: None,
        }),
        Err(error) => RunOutcome::Abort(RunAbort { steps, error }),
    }
}

fn react_loop(
    query: &str,
    text: &str,
    gateway: &Gateway,
    profile: &ModelProfile,
    prompts: &PromptSet,
    config: &BaselineConfig,
    steps: &mut Vec<StepRecord>,
) -> Result<(String, TerminatedBy), String> {
    let windows = chunk_text(
        text,
        &ChunkingOptions { token_budget: config.react_window_tokens, token_overlap: 0 },
    )
    .map_err(|e| e.to_string())?;
    let window_count = windows.len();
    let max_index = window_count - 1;
    let mut scratchpad = String::new();
    let mut read: BTreeSet<usize> = BTreeSet::new();

    for step in 1..=config.react_max_steps {
        let shown_scratchpad =
            if scratchpad.is_empty() { "(empty)".to_string() } else { scratchpad.clone() };
        let user = prompts.fill(
            &prompts.react,
            &[
                ("query", query),
                ("window_count", &window_count.to_string()),
                ("max_index", &max_index.to_string()),
                ("scratchpad", &shown_scratchpad),
            ],
        );
        let outcome = call_with_repair(
            gateway,
            profile,
            None,
            user,
            |_| prompts.react_repair.clone(),
            config.repair_retries,
            |reply| parse_react_action(reply).map(|p| (p, vec![])).map_err(|e| e.to_string()),
        )
        .map_err(|e| e.to_string())?;
        let mut warnings = outcome.warnings;
        let (action, reasoning) = match outcome.value {
            Some(parsed) => (parsed.action, parsed.reasoning),
            None => {
                // Keep the loop moving: read the lowest unread window.
                let fallback_index =
                    (0..window_count).find(|i| !read.contains(i)).unwrap_or(0);
                warnings.push(format!(
                    "no usable directive after repairs; degraded to reading window {fallback_index}"
                ));
                (ReactAction::Read(fallback_index), outcome.last_output.trim().to_string())
            }
        };
        let raw = outcome.last_output;

        match action {
            ReactAction::Final(answer) => {
                steps.push(cacheless_record(
                    step,
                    Phase::Final,
                    raw,
                    Some(Action::Final { answer: answer.clone() }),
                    warnings,
                ));
                return Ok((answer, TerminatedBy::Final));
            }
            ReactAction::Read(index) => {
                let observation = if index < window_count {
                    read.insert(index);
                    windows[index].text.clone()
                } else {
                    format!("OUT OF RANGE (max {max_index})")
                };
                scratchpad.push_str(&format!(
                    "Thought: {reasoning}\nAction: read[{index}]\nObservation: {observation}\n"
                ));
                steps.push(cacheless_record(step, Phase::Reason, raw, None, warnings));
            }
        }
    }

    let shown_scratchpad =
        if scratchpad.is_empty() { "(empty)".to_string() } else { scratchpad.clone() };
    let user = prompts.fill(
        &prompts.react_fallback,
        &[("query", query), ("scratchpad", &shown_scratchpad)],
    );
    let raw = single_call(gateway, profile, user)?;
    let answer = raw.trim().to_string();
    steps.push(cacheless_record(
        config.react_max_steps,
        Phase::Fallback,
        raw,
        None,
        vec!["step limit reached; answered from the scratchpad".to_string()],
    ));
    Ok((answer, TerminatedBy::StepLimit))
}
