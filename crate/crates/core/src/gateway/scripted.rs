//! Deterministic fixture-backed model backend.
//!
//! A fixture is a JSONL file. Line 1 is a header `{"mode": "queue"|"map"}`;
//! every other line is a [`FixtureEntry`]. Queue mode serves entries strictly
//! in file order (fingerprints, if present, are annotations only). Map mode
//! looks entries up by request fingerprint and serves them any number of
//! times; entries without a fingerprint form an in-order fallback queue that
//! is consumed once, which lets one fixture cover small request divergences.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, ChatResponse, GatewayError, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub content: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureMode {
    Queue,
    Map,
}

#[derive(Debug)]
struct State {
    queue: VecDeque<FixtureEntry>,
    map: HashMap<String, FixtureEntry>,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    mode: FixtureMode,
    state: Mutex<State>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    mode: String,
}

impl ScriptedBackend {
    /// In-memory queue backend; the workhorse for unit tests.
    pub fn from_queue<I>(entries: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        let queue = entries
            .into_iter()
            .map(|content| FixtureEntry {
                fingerprint: None,
                content: content.into(),
                prompt_tokens: None,
                output_tokens: None,
            })
            .collect();
        ScriptedBackend {
            mode: FixtureMode::Queue,
            state: Mutex::new(State { queue, map: HashMap::new() }),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::FixtureIo {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut lines = text.lines().enumerate();
        let header_line = loop {
            match lines.next() {
                Some((idx, line)) if line.trim().is_empty() => {
                    // A blank first line is suspicious enough to reject.
                    return Err(GatewayError::FixtureParse {
                        line: idx + 1,
                        message: "expected header line {\"mode\": ...}".to_string(),
                    });
                }
                Some((idx, line)) => break (idx, line),
                None => {
                    return Err(GatewayError::FixtureParse {
                        line: 1,
                        message: "empty fixture file".to_string(),
                    })
                }
            }
        };
        let header: Header =
            serde_json::from_str(header_line.1).map_err(|e| GatewayError::FixtureParse {
                line: header_line.0 + 1,
                message: format!("bad header: {e}"),
            })?;
        let mode = match header.mode.as_str() {
            "queue" => FixtureMode::Queue,
            "map" => FixtureMode::Map,
            other => {
                return Err(GatewayError::FixtureParse {
                    line: header_line.0 + 1,
                    message: format!("unknown mode {other:?} (expected \"queue\" or \"map\")"),
                })
            }
        };

        let mut queue = VecDeque::new();
        let mut map = HashMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line).map_err(|e| GatewayError::FixtureParse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            match (mode, &entry.fingerprint) {
                (FixtureMode::Map, Some(fp)) => {
                    if map.insert(fp.clone(), entry.clone()).is_some() {
                        return Err(GatewayError::FixtureParse {
                            line: idx + 1,
                            message: format!("duplicate fingerprint {fp} in map-mode fixture"),
                        });
                    }
                }
                // Map mode without a fingerprint: fallback queue.
                (FixtureMode::Map, None) | (FixtureMode::Queue, _) => queue.push_back(entry),
            }
        }
        Ok(ScriptedBackend { mode, state: Mutex::new(State { queue, map }) })
    }

    pub fn mode(&self) -> FixtureMode {
        self.mode
    }

    /// Entries still waiting in the (fallback) queue. Test support.
    pub fn queue_remaining(&self) -> usize {
        self.state.lock().expect("fixture state lock poisoned").queue.len()
    }

    fn respond(entry: &FixtureEntry) -> ChatResponse {
        ChatResponse {
            content: entry.content.clone(),
            usage: Usage {
                prompt_tokens: entry.prompt_tokens.unwrap_or(0),
                output_tokens: entry.output_tokens.unwrap_or(0),
            },
            backend: "scripted".to_string(),
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut state = self.state.lock().expect("fixture state lock poisoned");
        if self.mode == FixtureMode::Map {
            let fingerprint = super::request_fingerprint(&request.messages);
            if let Some(entry) = state.map.get(&fingerprint) {
                return Ok(Self::respond(entry));
            }
        }
        match state.queue.pop_front() {
            Some(entry) => Ok(Self::respond(&entry)),
            None => Err(GatewayError::FixtureExhausted),
        }
    }

    fn id(&self) -> &'static str {
        "scripted"
    }

    fn fixture_mode(&self) -> Option<FixtureMode> {
        Some(self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{request_fingerprint, ChatRequest, Gateway, Message, ModelProfile};
    use super::*;

    fn req(content: &str) -> ChatRequest {
        ChatRequest::new(vec![Message::user(content)], &ModelProfile::default())
    }

    #[test]
    fn queue_mode_ignores_fingerprints_and_serves_in_order() {
        let text = concat!(
            "{\"mode\": \"queue\"}\n",
            "{\"fingerprint\": \"not-checked\", \"content\": \"one\"}\n",
            "{\"content\": \"two\", \"prompt_tokens\": 7, \"output_tokens\": 3}\n",
        );
        let backend = ScriptedBackend::parse(text).unwrap();
        assert_eq!(backend.mode(), FixtureMode::Queue);
        let gw = Gateway::new(backend);
        assert_eq!(gw.complete(&req("whatever")).unwrap().content, "one");
        let second = gw.complete(&req("anything")).unwrap();
        assert_eq!(second.content, "two");
        assert_eq!(second.usage.prompt_tokens, 7);
        assert_eq!(second.usage.output_tokens, 3);
    }

    #[test]
    fn map_mode_matches_fingerprints_and_falls_back_to_queue() {
        let request = req("the question");
        let fp = request_fingerprint(&request.messages);
        let text = format!(
            "{{\"mode\": \"map\"}}\n{{\"fingerprint\": \"{fp}\", \"content\": \"mapped\"}}\n{{\"content\": \"fallback\"}}\n"
        );
        let backend = ScriptedBackend::parse(&text).unwrap();
        let gw = Gateway::new(backend);
        // Mapped entry is served for its fingerprint, repeatedly.
        assert_eq!(gw.complete(&request).unwrap().content, "mapped");
        assert_eq!(gw.complete(&request).unwrap().content, "mapped");
        // A miss takes from the fallback queue, exactly once.
        assert_eq!(gw.complete(&req("unscripted")).unwrap().content, "fallback");
        assert!(gw.complete(&req("unscripted again")).is_err());
        // The mapped entry is still there after the fallback drained.
        assert_eq!(gw.complete(&request).unwrap().content, "mapped");
    }

    #[test]
    fn map_mode_rejects_duplicate_fingerprints_with_line_number() {
        let text = concat!(
            "{\"mode\": \"map\"}\n",
            "{\"fingerprint\": \"abc\", \"content\": \"one\"}\n",
            "{\"fingerprint\": \"abc\", \"content\": \"two\"}\n",
        );
        match ScriptedBackend::parse(text) {
            Err(GatewayError::FixtureParse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate fingerprint"), "{message}");
            }
            other => panic!("expected FixtureParse, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_and_headers_report_positions() {
        match ScriptedBackend::parse("{\"mode\": \"map\"}\nnot json\n") {
            Err(GatewayError::FixtureParse { line: 2, .. }) => {}
            other => panic!("expected line-2 parse error, got {other:?}"),
        }
        match ScriptedBackend::parse("{\"mode\": \"sideways\"}\n") {
            Err(GatewayError::FixtureParse { line: 1, message }) => {
                assert!(message.contains("unknown mode"), "{message}");
            }
            other => panic!("expected header error, got {other:?}"),
        }
        match ScriptedBackend::parse("") {
            Err(GatewayError::FixtureParse { line: 1, .. }) => {}
            other => panic!("expected empty-file error, got {other:?}"),
        }
        // Unknown fields are rejected: typos must not silently pass.
        match ScriptedBackend::parse("{\"mode\": \"queue\"}\n{\"content\": \"x\", \"finger\": \"y\"}\n") {
            Err(GatewayError::FixtureParse { line: 2, .. }) => {}
            other => panic!("expected unknown-field error, got {other:?}"),
        }
    }

    #[test]
    fn blank_interior_lines_are_skipped() {
        let text = "{\"mode\": \"queue\"}\n\n{\"content\": \"only\"}\n\n";
        let backend = ScriptedBackend::parse(text).unwrap();
        assert_eq!(backend.queue_remaining(), 1);
    }
}
