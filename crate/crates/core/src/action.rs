//! Parsing the directives the reasoning loop understands.
//!
//! A well-formed reasoning reply contains exactly one directive —
//! `<seek>…</seek>` or `<final>…</final>` (ReAct uses `<read>…</read>` /
//! `<final>…</final>`) — with nonempty content. Tags are case-insensitive and
//! may span lines; everything outside the directive is free-form reasoning.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    /// Terminate with this answer.
    Final { answer: String },
    /// Request another extraction pass narrowed to this focus.
    Seek { focus: String },
}

/// ReAct's action space: read a numbered window or finish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReactAction {
    Read(usize),
    Final(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAction<A> {
    pub action: A,
    /// The reply with the directive removed, trimmed: the model's reasoning.
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionParseError {
    /// No directive found at all.
    Missing,
    /// More than one directive (of any kind) in one reply.
    Multiple,
    /// Directive present but with empty or unusable content.
    EmptyContent,
    /// ReAct read index was not a nonnegative integer.
    BadIndex(String),
}

impl std::fmt::Display for ActionParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionParseError::Missing => write!(f, "no directive found"),
            ActionParseError::Multiple => write!(f, "more than one directive found"),
            ActionParseError::EmptyContent => write!(f, "directive has empty content"),
            ActionParseError::BadIndex(s) => write!(f, "read index {s:?} is not a number"),
        }
    }
}

fn directive_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?is)<\s*(final|seek|read)\s*>(.*?)</\s*(final|seek|read)\s*>")
            .expect("directive regex compiles")
    })
}

struct RawDirective {
    tag: String,
    content: String,
    span: (usize, usize),
}

fn find_directives(text: &str) -> Vec<RawDirective> {
    directive_regex()
        .captures_iter(text)
        .filter_map(|caps| {
            let open = caps.get(1)?.as_str().to_ascii_lowercase();
            let close = caps.get(3)?.as_str().to_ascii_lowercase();
            if open != close {
                return None; // mismatched pair like <seek>…</final> is not a directive
            }
            let whole = caps.get(0)?;
            Some(RawDirective {
                tag: open,
                content: caps.get(2)?.as_str().to_string(),
                span: (whole.start(), whole.end()),
            })
        })
        .collect()
}

fn reasoning_without(text: &str, span: (usize, usize)) -> String {
    let mut out = String::with_capacity(text.len());
    out.push_str(&text[..span.0]);
    out.push_str(&text[span.1..]);
    out.trim().to_string()
}

/// Parse a reasoning-loop reply into a [`Action`] plus surrounding reasoning.
pub fn parse_action(text: &str) -> Result<ParsedAction<Action>, ActionParseError> {
    let directives = find_directives(text);
    let directives: Vec<&RawDirective> =
        directives.iter().filter(|d| d.tag != "read").collect();
    match directives.as_slice() {
        [] => Err(ActionParseError::Missing),
        [only] => {
            let content = only.content.trim();
            if content.is_empty() {
                return Err(ActionParseError::EmptyContent);
            }
            let action = match only.tag.as_str() {
                "final" => Action::Final { answer: content.to_string() },
                "seek" => Action::Seek { focus: content.to_string() },
                _ => unreachable!("filtered to final/seek"),
            };
            Ok(ParsedAction { action, reasoning: reasoning_without(text, only.span) })
        }
        _ => Err(ActionParseError::Multiple),
    }
}

/// Parse a ReAct reply. `<seek>` is not in ReAct's grammar: like any foreign
/// tag it counts as prose, so a reply carrying only a seek is malformed.
pub fn parse_react_action(text: &str) -> Result<ParsedAction<ReactAction>, ActionParseError> {
    let directives = find_directives(text);
    let directives: Vec<&RawDirective> =
        directives.iter().filter(|d| d.tag != "seek").collect();
    match directives.as_slice() {
        [] => Err(ActionParseError::Missing),
        [only] => {
            let content = only.content.trim();
            if content.is_empty() {
                return Err(ActionParseError::EmptyContent);
            }
            let action = match only.tag.as_str() {
                "final" => ReactAction::Final(content.to_string()),
                "read" => match content.parse::<usize>() {
                    Ok(index) => ReactAction::Read(index),
                    Err(_) => return Err(ActionParseError::BadIndex(content.to_string())),
                },
                _ => unreachable!("filtered to final/read"),
            };
            Ok(ParsedAction { action, reasoning: reasoning_without(text, only.span) })
        }
        _ => Err(ActionParseError::Multiple),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_and_seek_parse_with_reasoning_separated() {
        let parsed =
            parse_action("The cache settles it. <final>Tuesday at 10am</final>").unwrap();
        assert_eq!(parsed.action, Action::Final { answer: "Tuesday at 10am".to_string() });
        assert_eq!(parsed.reasoning, "The cache settles it.");

        let parsed = parse_action("Not enough yet.\n<seek>attendee names</seek>\n").unwrap();
        assert_eq!(parsed.action, Action::Seek { focus: "attendee names".to_string() });
        assert_eq!(parsed.reasoning, "Not enough yet.");
    }

    #[test]
    fn tags_are_case_insensitive_and_content_multiline() {
        let parsed = parse_action("<FINAL>\n  line one\n  line two\n</Final>").unwrap();
        assert_eq!(
            parsed.action,
            Action::Final { answer: "line one\n  line two".to_string() }
        );
        assert_eq!(parsed.reasoning, "");
    }

    #[test]
    fn malformed_replies_are_rejected_with_the_right_reason() {
        assert_eq!(parse_action("just prose").unwrap_err(), ActionParseError::Missing);
        assert_eq!(
            parse_action("<seek>a</seek> then <final>b</final>").unwrap_err(),
            ActionParseError::Multiple
        );
        assert_eq!(
            parse_action("<seek>one</seek> and <seek>two</seek>").unwrap_err(),
            ActionParseError::Multiple
        );
        assert_eq!(parse_action("<final>   </final>").unwrap_err(), ActionParseError::EmptyContent);
        assert_eq!(parse_action("<final>unclosed").unwrap_err(), ActionParseError::Missing);
        // Mismatched open/close pairs are not directives.
        assert_eq!(parse_action("<seek>x</final>").unwrap_err(), ActionParseError::Missing);
    }

    #[test]
    fn loop_parser_ignores_read_react_parser_ignores_seek() {
        // <read> belongs to ReAct; in the main loop it is no directive at all.
        assert_eq!(parse_action("<read>3</read>").unwrap_err(), ActionParseError::Missing);
        assert_eq!(
            parse_react_action("<seek>stuff</seek>").unwrap_err(),
            ActionParseError::Missing
        );
    }

    #[test]
    fn react_reads_parse_index_and_reject_non_numbers() {
        let parsed = parse_react_action("Look further. <read> 4 </read>").unwrap();
        assert_eq!(parsed.action, ReactAction::Read(4));
        assert_eq!(parsed.reasoning, "Look further.");
        assert_eq!(
            parse_react_action("<read>four</read>").unwrap_err(),
            ActionParseError::BadIndex("four".to_string())
        );
        let done = parse_react_action("<final>it is 7</final>").unwrap();
        assert_eq!(done.action, ReactAction::Final("it is 7".to_string()));
    }

    #[test]
    fn directive_may_sit_mid_text() {
        let parsed = parse_action("before <seek>the gap</seek> after").unwrap();
        assert_eq!(parsed.action, Action::Seek { focus: "the gap".to_string() });
        assert_eq!(parsed.reasoning, "before  after");
    }

    #[test]
    fn non_greedy_matching_stops_at_the_first_close_tag() {
        // Greedy matching would swallow "</final> x <final>y" as content.
        let result = parse_action("<final>a</final> x <final>y</final>");
        assert_eq!(result.unwrap_err(), ActionParseError::Multiple);
    }
}
