//! All prompt templates in one place, plus the shared call-and-repair loop.
//!
//! Templates are plain strings with `{key}` placeholders filled by a single
//! substitution pass (no recursion, no escaping: values are inserted
//! verbatim). Every template can be overridden from the run config, so prompt
//! wording is data, not code.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, GatewayError, Message, ModelProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub schema_induction: String,
    pub schema_repair: String,
    pub extraction: String,
    pub extraction_focus_line: String,
    pub extraction_monolithic: String,
    pub monolithic_repair: String,
    pub records_repair: String,
    pub reason: String,
    pub reason_repair: String,
    pub update: String,
    pub check: String,
    pub fallback: String,
    pub generic: String,
    pub cot: String,
    pub react: String,
    pub react_repair: String,
    pub react_fallback: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            schema_induction: SCHEMA_INDUCTION.to_string(),
            schema_repair: SCHEMA_REPAIR.to_string(),
            extraction: EXTRACTION.to_string(),
            extraction_focus_line: EXTRACTION_FOCUS_LINE.to_string(),
            extraction_monolithic: EXTRACTION_MONOLITHIC.to_string(),
            monolithic_repair: MONOLITHIC_REPAIR.to_string(),
            records_repair: RECORDS_REPAIR.to_string(),
            reason: REASON.to_string(),
            reason_repair: REASON_REPAIR.to_string(),
            update: UPDATE.to_string(),
            check: CHECK.to_string(),
            fallback: FALLBACK.to_string(),
            generic: GENERIC.to_string(),
            cot: COT.to_string(),
            react: REACT.to_string(),
            react_repair: REACT_REPAIR.to_string(),
            react_fallback: REACT_FALLBACK.to_string(),
        }
    }
}

impl PromptSet {
    /// One-pass `{key}` substitution. Unknown placeholders are left intact so
    /// template typos are visible in recorded prompts rather than swallowed.
    pub fn fill(&self, template: &str, pairs: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        'outer: while let Some(open) = rest.find('{') {
            let (before, after_open) = rest.split_at(open);
            out.push_str(before);
            if let Some(close) = after_open.find('}') {
                let key = &after_open[1..close];
                for (k, v) in pairs {
                    if *k == key {
                        out.push_str(v);
                        rest = &after_open[close + 1..];
                        continue 'outer;
                    }
                }
            }
            // No matching key (or unclosed brace): emit the brace literally.
            out.push('{');
            rest = &after_open[1..];
        }
        out.push_str(rest);
        out
    }
}

pub struct RepairOutcome<T> {
    /// `None` when every attempt (1 + retries) failed to parse.
    pub value: Option<T>,
    /// Raw model output of the last call made.
    pub last_output: String,
    pub warnings: Vec<String>,
}

/// Issue a request and, when `parse` rejects the output, re-prompt with the
/// malformed output attached, up to `retries` extra calls. Gateway errors
/// always propagate; parse failure after the budget is a soft outcome
/// (`value: None`) so callers can degrade instead of aborting.
pub fn call_with_repair<T>(
    gateway: &Gateway,
    profile: &ModelProfile,
    system: Option<&str>,
    user: String,
    repair_prompt: impl Fn(&str) -> String,
    retries: usize,
    mut parse: impl FnMut(&str) -> Result<(T, Vec<String>), String>,
) -> Result<RepairOutcome<T>, GatewayError> {
    let base: Vec<Message> = system
        .map(Message::system)
        .into_iter()
        .chain(std::iter::once(Message::user(user.clone())))
        .collect();
    let mut last_output = String::new();
    let mut warnings = Vec::new();
    for attempt in 0..=retries {
        let messages = if attempt == 0 {
            base.clone()
        } else {
            let mut m = base.clone();
            m.push(Message::assistant(last_output.clone()));
            m.push(Message::user(repair_prompt(&last_output)));
            m
        };
        let response = gateway.complete(&ChatRequest::new(messages, profile))?;
        last_output = response.content;
        match parse(&last_output) {
            Ok((value, mut parse_warnings)) => {
                if attempt > 0 {
                    warnings.push(format!("output accepted after {attempt} repair call(s)"));
                }
                warnings.append(&mut parse_warnings);
                return Ok(RepairOutcome { value: Some(value), last_output, warnings });
            }
            Err(reason) => {
                warnings.push(format!("parse attempt {} failed: {reason}", attempt + 1));
            }
        }
    }
    Ok(RepairOutcome { value: None, last_output, warnings })
}

const SCHEMA_INDUCTION: &str = "You are preparing to answer a question about a long document you have not seen yet.\n\
Question: {query}\n\n\
Design a flat table schema for the facts needed to answer the question.\n\
Reply with a JSON array of slot objects, each {\"name\": ..., \"description\": ..., \"kind\": ...}\n\
where kind is one of \"text\", \"number\", \"datetime\", \"boolean\".\n\
Use at most 12 slots. Output the JSON array and nothing else.";

const SCHEMA_REPAIR: &str = "Your previous reply did not contain a usable JSON array of slot objects.\n\
Reply again with only a JSON array of objects, each {\"name\": ..., \"description\": ..., \"kind\": ...},\n\
kind being one of \"text\", \"number\", \"datetime\", \"boolean\".";

const EXTRACTION: &str = "Extract facts relevant to the question from the passage below.\n\
Question: {query}\n\
Table schema (JSON): {schema}\n\
{focus_line}\
Passage:\n\
---\n\
{chunk}\n\
---\n\
Reply with a JSON array of row objects whose keys are the schema slot names.\n\
Use null for values the passage does not state. If the passage has nothing\n\
relevant, reply with []. Output the JSON array and nothing else.";

const EXTRACTION_FOCUS_LINE: &str = "FOCUS: prioritize information about: {focus}\n";

const EXTRACTION_MONOLITHIC: &str = "Read the document below and build a fact table for answering the question.\n\
Question: {query}\n\
Document:\n\
---\n\
{text}\n\
---\n\
Reply with exactly two JSON arrays.\n\
First array: the table schema, objects {\"name\": ..., \"description\": ..., \"kind\": ...}\n\
with kind one of \"text\", \"number\", \"datetime\", \"boolean\" (at most 12 slots).\n\
Second array: the rows, objects keyed by the slot names, null for unknown values.\n\
Output the two JSON arrays and nothing else.";

const MONOLITHIC_REPAIR: &str = "Your previous reply did not contain a usable schema.\n\
Reply again with exactly two JSON arrays and nothing else:\n\
first the schema (objects {\"name\": ..., \"description\": ..., \"kind\": ...}),\n\
then the rows (objects keyed by the slot names).";

const RECORDS_REPAIR: &str = "Your previous reply did not contain a usable JSON array of row objects.\n\
Reply again with only a JSON array of objects keyed by the schema slot names\n\
(use [] if there is nothing to report).";

const REASON: &str = "You are answering a question using a fact table cached from a long document.\n\
Question: {query}\n\
Cached fact table (one row per line, columns separated by |):\n\
{cache}\n\n\
Think briefly about whether the table already supports a confident answer.\n\
Then end your reply with exactly one directive:\n\
<final>your answer</final> if the table is sufficient, or\n\
<seek>what to look for</seek> to pull more facts from the document.";

const REASON_REPAIR: &str = "Your previous reply did not end with exactly one directive.\n\
Reply again and end with exactly one of:\n\
<final>your answer</final> or <seek>what to look for</seek>.";

const UPDATE: &str = "You maintain the cached fact table for this question.\n\
Question: {query}\n\
Current table rows (JSON): {cache_rows}\n\
Newly extracted rows (JSON): {new_rows}\n\n\
Merge the new rows into the table: keep rows that remain useful for the\n\
question, fold in the new information, drop duplicates and dead weight.\n\
Reply with the full resulting table as one JSON array of row objects keyed by\n\
the schema slot names. Output the JSON array and nothing else.";

const CHECK: &str = "You maintain the cached fact table for this question.\n\
Question: {query}\n\
Current table rows (JSON): {cache_rows}\n\
Latest reasoning step:\n\
{reasoning}\n\n\
Audit the table: remove rows that contradict the document evidence above,\n\
fix obviously inconsistent cells, and keep everything still useful.\n\
Reply with the full audited table as one JSON array of row objects keyed by\n\
the schema slot names. Output the JSON array and nothing else.";

const FALLBACK: &str = "Answer the question using only the cached fact table below.\n\
Question: {query}\n\
Cached fact table (one row per line, columns separated by |):\n\
{cache}\n\n\
Give your best answer directly. Output only the answer.";

const GENERIC: &str = "Answer the question based on the document.\n\
Question: {query}\n\
Document:\n\
---\n\
{text}\n\
---\n\
Output only the answer.";

const COT: &str = "Answer the question based on the document.\n\
Question: {query}\n\
Document:\n\
---\n\
{text}\n\
---\n\
Let's think step by step. Work through the evidence, then give the final\n\
answer on a last line formatted exactly as: Answer: <answer>";

const REACT: &str = "You answer a question about a document you can only read one window at a time.\n\
Question: {query}\n\
The document is split into {window_count} windows numbered 0 to {max_index}.\n\
Scratchpad of your work so far:\n\
{scratchpad}\n\n\
Continue with one Thought line, then end your reply with exactly one directive:\n\
<read>window number</read> to look at a window, or\n\
<final>your answer</final> once you can answer.";

const REACT_REPAIR: &str = "Your previous reply did not end with exactly one directive.\n\
Reply again and end with exactly one of:\n\
<read>window number</read> or <final>your answer</final>.";

const REACT_FALLBACK: &str = "You ran out of reading steps. Based on your scratchpad so far, answer the question.\n\
Question: {query}\n\
Scratchpad:\n\
{scratchpad}\n\n\
Give your best answer directly. Output only the answer.";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_substitutes_each_key_once_without_recursion() {
        let p = PromptSet::default();
        let out = p.fill("Q: {query} again {query}, cache: {cache}", &[
            ("query", "who? {cache}"),
            ("cache", "TABLE"),
        ]);
        // The {cache} inside the substituted value must NOT be expanded.
        assert_eq!(out, "Q: who? {cache} again who? {cache}, cache: TABLE");
    }

    #[test]
    fn fill_leaves_unknown_placeholders_visible() {
        let p = PromptSet::default();
        assert_eq!(p.fill("a {unknown} b {query}", &[("query", "q")]), "a {unknown} b q");
        assert_eq!(p.fill("brace { and {q}", &[("q", "x")]), "brace { and x");
    }

    #[test]
    fn repair_returns_value_and_notes_repair_count() {
        let gw = Gateway::from_queue(["bad", "good"]);
        let outcome = call_with_repair(
            &gw,
            &ModelProfile::default(),
            None,
            "please".to_string(),
            |_| "fix it".to_string(),
            2,
            |text| {
                if text == "good" {
                    Ok(((), vec![]))
                } else {
                    Err("not good".to_string())
                }
            },
        )
        .unwrap();
        assert!(outcome.value.is_some());
        assert_eq!(outcome.last_output, "good");
        assert!(outcome.warnings.iter().any(|w| w.contains("1 repair call")));
    }

    #[test]
    fn repair_stops_at_the_retry_budget() {
        let gw = Gateway::from_queue(["a", "b", "c", "d"]);
        let outcome = call_with_repair(
            &gw,
            &ModelProfile::default(),
            None,
            "please".to_string(),
            |_| "fix".to_string(),
            2,
            |_: &str| Err::<((), Vec<String>), String>("never".to_string()),
        )
        .unwrap();
        assert!(outcome.value.is_none());
        assert_eq!(outcome.last_output, "c");
        // 1 initial + 2 repairs = 3 calls; "d" stays queued.
        assert_eq!(gw.calls_made(), 3);
    }

    #[test]
    fn repair_requests_carry_the_malformed_output_back() {
        let gw = Gateway::from_queue(["BROKEN", "ok"]).with_recording();
        call_with_repair(
            &gw,
            &ModelProfile::default(),
            Some("sys"),
            "original".to_string(),
            |bad| format!("this was malformed: {bad}"),
            1,
            |text| {
                if text == "ok" {
                    Ok(((), vec![]))
                } else {
                    Err("no".to_string())
                }
            },
        )
        .unwrap();
        let transcript = gw.transcript();
        assert_eq!(transcript.len(), 2);
        let repair_messages = &transcript[1].request.messages;
        assert_eq!(repair_messages.len(), 4); // system, user, assistant(bad), user(repair)
        assert_eq!(repair_messages[2].content, "BROKEN");
        assert!(repair_messages[3].content.contains("this was malformed: BROKEN"));
    }

    #[test]
    fn gateway_errors_propagate_out_of_repair() {
        let gw = Gateway::from_queue(["only one"]);
        let result = call_with_repair(
            &gw,
            &ModelProfile::default(),
            None,
            "u".to_string(),
            |_| "r".to_string(),
            3,
            |_: &str| Err::<((), Vec<String>), String>("always".to_string()),
        );
        assert!(result.is_err(), "exhausted fixture should surface as a gateway error");
    }
}
