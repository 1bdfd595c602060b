use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatClient, OracleError, PromptBundle};

/// Environment variable holding the bearer token for remote mode.
pub const API_KEY_ENV: &str = "REPRO_MCTS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.2,
            timeout_secs: 120,
        }
    }
}

/// Token counts accumulated from `usage` blocks in responses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

/// Blocking chat-completions client: system and user messages, images as base64 data
/// URLs, bearer auth.
pub struct RemoteChatClient {
    config: RemoteConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    requests: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    total_tokens: AtomicU64,
}

impl RemoteChatClient {
    pub fn new(config: RemoteConfig, api_key: impl Into<String>) -> Result<Self, OracleError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::Config(e.to_string()))?;
        Ok(RemoteChatClient {
            config,
            api_key: api_key.into(),
            http,
            requests: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
            total_tokens: AtomicU64::new(0),
        })
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(config: RemoteConfig) -> Result<Self, OracleError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| OracleError::Auth(format!("{API_KEY_ENV} is not set")))?;
        Self::new(config, key)
    }

    pub fn usage(&self) -> TokenUsage {
        TokenUsage {
            requests: self.requests.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
            total_tokens: self.total_tokens.load(Ordering::Relaxed),
        }
    }

    pub fn payload(&self, bundle: &PromptBundle) -> Value {
        let user = if bundle.attachments.is_empty() {
            json!(bundle.user_text)
        } else {
            let mut parts = vec![json!({"type": "text", "text": bundle.user_text})];
            for img in &bundle.attachments {
                let b64 = base64::engine::general_purpose::STANDARD.encode(img);
                parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}}));
            }
            Value::Array(parts)
        };
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": bundle.system_message()},
                {"role": "user", "content": user},
            ],
        })
    }

    fn record_usage(&self, body: &Value) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let Some(usage) = body.get("usage") else { return };
        let get = |k: &str| usage.get(k).and_then(Value::as_u64).unwrap_or(0);
        self.prompt_tokens.fetch_add(get("prompt_tokens"), Ordering::Relaxed);
        self.completion_tokens.fetch_add(get("completion_tokens"), Ordering::Relaxed);
        self.total_tokens.fetch_add(get("total_tokens"), Ordering::Relaxed);
    }
}

/// First message text of a chat-completions response body.
pub(crate) fn first_message_text(body: &Value) -> Option<String> {
    let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let text: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            (!text.is_empty()).then(|| text.join(""))
        }
        _ => None,
    }
}

impl ChatClient for RemoteChatClient {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, OracleError> {
        let resp = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.payload(bundle))
            .send()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| OracleError::Transport(e.to_string()))?;
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(OracleError::Auth(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(OracleError::Transport(format!("HTTP {status}: {snippet}")));
        }
        let body: Value =
            serde_json::from_str(&text).map_err(|e| OracleError::Transport(format!("response is not JSON: {e}")))?;
        self.record_usage(&body);
        if let Some(u) = body.get("usage") {
            log::info!("token usage: {u}");
        }
        first_message_text(&body).ok_or_else(|| OracleError::Transport("response has no message text".into()))
    }
}
