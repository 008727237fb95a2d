use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NamingError, VlmRequest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { code, .. } => *code == 429 || *code >= 500,
            ClientError::Malformed(_) => false,
        }
    }
}

/// Anything that can answer a [`VlmRequest`] with text.
pub trait VlmClient: Send + Sync {
    fn complete(&self, request: &VlmRequest) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    /// Delay before retry `i` (1-based) is `backoff * i`.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Sends `request`, retrying transient failures. Returns the outcome and the
/// number of attempts made (at most `1 + max_retries`).
pub fn send_with_retry(
    client: &dyn VlmClient,
    request: &VlmRequest,
    policy: &RetryPolicy,
) -> (Result<String, NamingError>, usize) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(request) {
            Ok(text) => return (Ok(text), attempts),
            Err(ClientError::Malformed(msg)) => {
                return (Err(NamingError::MalformedResponse(msg)), attempts)
            }
            Err(err) if !err.is_retryable() || attempts > policy.max_retries => {
                return (
                    Err(NamingError::EndpointUnreachable {
                        attempts,
                        last: err.to_string(),
                    }),
                    attempts,
                )
            }
            Err(err) => {
                tracing::warn!(
                    neuron = request.probe.neuron_id,
                    attempt = attempts,
                    error = %err,
                    "model request failed, retrying"
                );
                std::thread::sleep(policy.backoff * attempts as u32);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub temperature: f64,
    /// Environment variable holding the bearer token. Unset means no auth.
    pub api_key_env: String,
}

impl Default for VlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "medgemma".into(),
            timeout_secs: 120,
            max_retries: 3,
            temperature: 0.0,
            api_key_env: "VLM_API_KEY".into(),
        }
    }
}

/// Blocking client for an OpenAI-style `/chat/completions` endpoint.
pub struct HttpVlmClient {
    http: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpVlmClient {
    pub fn new(cfg: &VlmEndpointConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: &VlmEndpointConfig, api_key: Option<String>) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl VlmClient for HttpVlmClient {
    fn complete(&self, request: &VlmRequest) -> Result<String, ClientError> {
        let mut req = self
            .http
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(request.wire_bytes());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                code: status.as_u16(),
                body,
            });
        }
        let value: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| ClientError::Malformed(format!("invalid JSON: {e}")))?;
        extract_answer_text(&value)
            .ok_or_else(|| ClientError::Malformed("no answer text in response".into()))
    }
}

/// Pulls the answer out of a response body. Accepts
/// `choices[0].message.content` as a string or a list of text parts, then
/// falls back to a top-level `text`, `content` or `response` string.
pub fn extract_answer_text(v: &serde_json::Value) -> Option<String> {
    if let Some(content) = v.pointer("/choices/0/message/content") {
        if let Some(s) = content.as_str() {
            return Some(s.to_string());
        }
        if let Some(parts) = content.as_array() {
            let text: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect();
            if !text.is_empty() {
                return Some(text.concat());
            }
        }
    }
    if let Some(s) = v.pointer("/choices/0/text").and_then(|t| t.as_str()) {
        return Some(s.to_string());
    }
    ["text", "content", "response"]
        .iter()
        .find_map(|k| v.get(*k).and_then(|t| t.as_str()).map(str::to_string))
}
