//! Uniform chat-completion access for every model call in the crate.
//!
//! Two backends implement the same [`Backend`] trait: [`HttpBackend`] talks to
//! an OpenAI-compatible `/chat/completions` endpoint, and [`ScriptedBackend`]
//! serves canned responses from a fixture so whole runs replay offline and
//! byte-for-byte deterministically. A [`Gateway`] wraps a backend, fingerprints
//! each request, optionally records the full transcript, and normalizes
//! responses (trailing whitespace is trimmed once, centrally).

mod http;
mod scripted;

pub use http::{HttpBackend, DEFAULT_RETRY_LIMIT};
pub use scripted::{FixtureEntry, FixtureMode, ScriptedBackend};

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable that overrides the configured endpoint base URL.
pub const API_BASE_ENV: &str = "IECACHE_API_BASE";
/// Default environment variable holding the bearer key for live runs.
pub const API_KEY_ENV: &str = "IECACHE_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("scripted backend has no response for this request")]
    FixtureExhausted,
    #[error("auth key environment variable {var} is not set")]
    AuthMissing { var: String },
    #[error("no endpoint configured: set the profile endpoint or {API_BASE_ENV}")]
    EndpointMissing,
    #[error("fixture parse error at line {line}: {message}")]
    FixtureParse { line: usize, message: String },
    #[error("fixture io error for {path}: {message}")]
    FixtureIo { path: PathBuf, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::System => write!(f, "system"),
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

/// Decoding settings shared by every call of a run. Greedy decoding
/// (temperature 0) is the default so repeated runs agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Endpoint base URL for live runs, e.g. `https://host/v1`.
    /// `IECACHE_API_BASE` overrides it when set.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer key.
    pub auth_source: String,
}

impl Default for ModelProfile {
    fn default() -> Self {
        ModelProfile {
            name: "default".to_string(),
            temperature: 0.0,
            max_output_tokens: 1024,
            endpoint: None,
            auth_source: API_KEY_ENV.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub profile: ModelProfile,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, profile: &ModelProfile) -> Self {
        ChatRequest { messages, profile: profile.clone() }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("empty message list".to_string()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    /// Which backend produced this response (`"http"` or `"scripted"`).
    pub backend: String,
}

/// One request/response pair captured by a recording gateway.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub sequence_index: u64,
    pub request_fingerprint: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Stable digest of a message list: sha256 over `role\ncontent\n` per message.
/// Used to key fixture lookups and to label transcript records.
pub fn request_fingerprint(messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    for message in messages {
        hasher.update(message.role.to_string().as_bytes());
        hasher.update(b"\n");
        hasher.update(message.content.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn id(&self) -> &'static str;
    /// `Some(mode)` for scripted backends, `None` for live ones.
    fn fixture_mode(&self) -> Option<FixtureMode> {
        None
    }
}

/// Front door for model calls: validates, fingerprints, dispatches to the
/// backend, trims trailing whitespace from the reply, and (optionally) records
/// the exchange for later fixture export.
pub struct Gateway {
    backend: Box<dyn Backend>,
    recorder: Option<Mutex<Vec<TranscriptRecord>>>,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway { backend: Box::new(backend), recorder: None, calls: AtomicU64::new(0) }
    }

    /// Scripted gateway serving `entries` in order, ignoring request content.
    pub fn from_queue<I>(entries: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        Gateway::new(ScriptedBackend::from_queue(entries))
    }

    /// Enable transcript capture; see [`Gateway::transcript`] and [`write_fixture`].
    pub fn with_recording(mut self) -> Self {
        self.recorder = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fingerprint = request_fingerprint(&request.messages);
        let mut response = self.backend.complete(request)?;
        response.content = response.content.trim_end().to_string();
        if let Some(recorder) = &self.recorder {
            let mut records = recorder.lock().expect("recorder lock poisoned");
            let sequence_index = records.len() as u64;
            records.push(TranscriptRecord {
                sequence_index,
                request_fingerprint: fingerprint,
                request: request.clone(),
                response: response.clone(),
            });
        }
        Ok(response)
    }

    /// Total `complete` invocations (including failed ones).
    pub fn calls_made(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn is_recording(&self) -> bool {
        self.recorder.is_some()
    }

    pub fn fixture_mode(&self) -> Option<FixtureMode> {
        self.backend.fixture_mode()
    }

    pub fn backend_id(&self) -> &'static str {
        self.backend.id()
    }

    /// Snapshot of everything recorded so far, in call order.
    pub fn transcript(&self) -> Vec<TranscriptRecord> {
        match &self.recorder {
            Some(recorder) => recorder.lock().expect("recorder lock poisoned").clone(),
            None => Vec::new(),
        }
    }
}

/// Serialize a recorded transcript as a map-mode fixture file.
///
/// Duplicate fingerprints keep the first recorded response; a duplicate whose
/// content differs is dropped with a warning (greedy decoding should never
/// produce one). Returns the warnings.
pub fn write_fixture(path: &Path, records: &[TranscriptRecord]) -> Result<Vec<String>, GatewayError> {
    let mut warnings = Vec::new();
    let mut seen: std::collections::HashMap<&str, &str> = std::collections::HashMap::new();
    let mut lines = vec![serde_json::json!({ "mode": "map" }).to_string()];
    for record in records {
        match seen.get(record.request_fingerprint.as_str()) {
            Some(previous) => {
                if *previous != record.response.content {
                    warnings.push(format!(
                        "fixture export: conflicting responses for fingerprint {}; kept the first",
                        record.request_fingerprint
                    ));
                }
            }
            None => {
                seen.insert(&record.request_fingerprint, &record.response.content);
                let entry = FixtureEntry {
                    fingerprint: Some(record.request_fingerprint.clone()),
                    content: record.response.content.clone(),
                    prompt_tokens: Some(record.response.usage.prompt_tokens),
                    output_tokens: Some(record.response.usage.output_tokens),
                };
                lines.push(serde_json::to_string(&entry).expect("fixture entry serializes"));
            }
        }
    }
    let body = lines.join("\n") + "\n";
    std::fs::write(path, body).map_err(|e| GatewayError::FixtureIo {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(warnings)
}
