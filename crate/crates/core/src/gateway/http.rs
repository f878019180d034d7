//! Live backend for OpenAI-compatible chat-completion endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, ChatResponse, GatewayError, ModelProfile, Usage, API_BASE_ENV};

/// Blocking HTTP client for `{base}/chat/completions`.
///
/// Transient failures (connection errors, HTTP 429, HTTP 5xx) are retried up
/// to `retry_limit` times with linear backoff; anything else fails fast.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    retry_limit: u32,
}

pub const DEFAULT_RETRY_LIMIT: u32 = 2;

impl HttpBackend {
    pub fn new(retry_limit: u32) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Transport(format!("client build failed: {e}")))?;
        Ok(HttpBackend { client, retry_limit })
    }
}

/// Endpoint base for a profile: `IECACHE_API_BASE` wins over the profile field.
pub fn resolve_endpoint(profile: &ModelProfile) -> Result<String, GatewayError> {
    match std::env::var(API_BASE_ENV) {
        Ok(value) if !value.trim().is_empty() => Ok(value.trim().to_string()),
        _ => match &profile.endpoint {
            Some(endpoint) if !endpoint.trim().is_empty() => Ok(endpoint.trim().to_string()),
            _ => Err(GatewayError::EndpointMissing),
        },
    }
}

fn resolve_key(profile: &ModelProfile) -> Result<String, GatewayError> {
    std::env::var(&profile.auth_source)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| GatewayError::AuthMissing { var: profile.auth_source.clone() })
}

pub(crate) fn chat_completions_url(base: &str) -> String {
    format!("{}/chat/completions", base.trim_end_matches('/'))
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: String,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn retryable_status(status: reqwest::StatusCode) -> bool {
    status.as_u16() == 429 || status.is_server_error()
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let base = resolve_endpoint(&request.profile)?;
        let key = resolve_key(&request.profile)?;
        let url = chat_completions_url(&base);
        let body = WireRequest {
            model: &request.profile.name,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role.to_string(), content: &m.content })
                .collect(),
            temperature: request.profile.temperature,
            max_tokens: request.profile.max_output_tokens,
        };

        let mut last_error = String::new();
        for attempt in 0..=self.retry_limit {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * attempt as u64));
            }
            let sent = self.client.post(&url).bearer_auth(&key).json(&body).send();
            match sent {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let wire: WireResponse = response.json().map_err(|e| {
                            GatewayError::Transport(format!("bad response body: {e}"))
                        })?;
                        let choice = wire.choices.into_iter().next().ok_or_else(|| {
                            GatewayError::Transport("response had no choices".to_string())
                        })?;
                        let usage = wire.usage.map_or_else(Usage::default, |u| Usage {
                            prompt_tokens: u.prompt_tokens.unwrap_or(0),
                            output_tokens: u.completion_tokens.unwrap_or(0),
                        });
                        return Ok(ChatResponse {
                            content: choice.message.content.unwrap_or_default(),
                            usage,
                            backend: "http".to_string(),
                        });
                    }
                    let snippet: String =
                        response.text().unwrap_or_default().chars().take(200).collect();
                    last_error = format!("http {status}: {snippet}");
                    if !retryable_status(status) {
                        return Err(GatewayError::Transport(last_error));
                    }
                }
                Err(e) => {
                    last_error = format!("request failed: {e}");
                }
            }
        }
        Err(GatewayError::Transport(format!(
            "giving up after {} attempts: {last_error}",
            self.retry_limit + 1
        )))
    }

    fn id(&self) -> &'static str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_join_tolerates_trailing_slashes() {
        assert_eq!(chat_completions_url("http://h/v1"), "http://h/v1/chat/completions");
        assert_eq!(chat_completions_url("http://h/v1/"), "http://h/v1/chat/completions");
    }

    #[test]
    fn endpoint_resolution_prefers_env_and_errors_when_absent() {
        // Unique var name so this test cannot race with others over env state.
        let profile = ModelProfile {
            endpoint: Some("http://from-profile/v1".to_string()),
            ..ModelProfile::default()
        };
        assert_eq!(resolve_endpoint(&profile).unwrap(), "http://from-profile/v1");
        let bare = ModelProfile { endpoint: None, ..ModelProfile::default() };
        assert!(matches!(resolve_endpoint(&bare), Err(GatewayError::EndpointMissing)));
    }

    #[test]
    fn missing_auth_variable_is_reported_by_name() {
        let profile = ModelProfile {
            endpoint: Some("http://unused/v1".to_string()),
            auth_source: "IECACHE_TEST_KEY_THAT_IS_NEVER_SET".to_string(),
            ..ModelProfile::default()
        };
        let request =
            ChatRequest::new(vec![super::super::Message::user("q")], &profile);
        let backend = HttpBackend::new(0).unwrap();
        match backend.complete(&request) {
            Err(GatewayError::AuthMissing { var }) => {
                assert_eq!(var, "IECACHE_TEST_KEY_THAT_IS_NEVER_SET");
            }
            other => panic!("expected AuthMissing, got {other:?}"),
        }
    }
}
