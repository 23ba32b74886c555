//! Chat-completion backends that accept interleaved text and image parts.
//!
//! Two backends ship: [`HttpBackend`] speaks the OpenAI-compatible
//! `/chat/completions` protocol, and [`ScriptedBackend`] replays a fixed queue
//! of replies so the whole pipeline can run offline.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Cursor;
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Environment variable holding the bearer credential for HTTP backends.
pub const API_KEY_ENV: &str = "CHARTSMITH_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("credential rejected: {0}")]
    Auth(String),
    #[error("model returned an empty reply")]
    Refusal,
    #[error("scripted backend exhausted after {served} replies")]
    ScriptExhausted { served: usize },
}

impl GatewayError {
    /// Only transport-level failures are retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Image { data: Vec<u8>, media_type: String },
}

impl ContentPart {
    pub fn text(s: impl Into<String>) -> Self {
        ContentPart::Text(s.into())
    }

    pub fn png(data: Vec<u8>) -> Self {
        ContentPart::Image {
            data,
            media_type: "image/png".to_string(),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, ContentPart::Image { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn user(parts: Vec<ContentPart>) -> Self {
        ChatMessage {
            role: Role::User,
            parts,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            parts: vec![ContentPart::text(text)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        for (i, msg) in self.messages.iter().enumerate() {
            if msg.parts.is_empty() {
                return Err(GatewayError::InvalidRequest(format!("message {i} has no parts")));
            }
            for part in &msg.parts {
                if let ContentPart::Image { data, .. } = part {
                    image::ImageReader::new(Cursor::new(data))
                        .with_guessed_format()
                        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?
                        .into_dimensions()
                        .map_err(|e| {
                            GatewayError::InvalidRequest(format!("message {i}: image part does not decode: {e}"))
                        })?;
                }
            }
        }
        Ok(())
    }

    /// All text parts, in order, joined by newlines.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for part in self.messages.iter().flat_map(|m| &m.parts) {
            if let ContentPart::Text(t) = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(t);
            }
        }
        out
    }

    pub fn image_parts(&self) -> Vec<&[u8]> {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter_map(|p| match p {
                ContentPart::Image { data, .. } => Some(data.as_slice()),
                ContentPart::Text(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        TokenUsage {
            prompt_tokens,
            completion_tokens,
        }
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    /// Set when the backend did not report usage and it was estimated from the reply length.
    #[serde(default)]
    pub usage_estimated: bool,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>, usage: TokenUsage) -> Self {
        ChatResponse {
            text: text.into(),
            usage,
            usage_estimated: false,
        }
    }

    /// Response whose usage is estimated as ceil(chars / 4) completion tokens.
    pub fn with_estimated_usage(text: impl Into<String>) -> Self {
        let text = text.into();
        let completion = estimate_completion_tokens(&text);
        ChatResponse {
            text,
            usage: TokenUsage::new(0, completion),
            usage_estimated: true,
        }
    }
}

pub fn estimate_completion_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Validates the request, runs the backend, and rejects empty replies.
pub fn complete(backend: &dyn ChatBackend, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    request.validate()?;
    let response = backend.complete(request)?;
    if response.text.trim().is_empty() {
        return Err(GatewayError::Refusal);
    }
    Ok(response)
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled for each later attempt.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        // attempt is 1-based; no delay before the first one.
        if attempt <= 1 {
            Duration::ZERO
        } else {
            self.base_delay * 2u32.saturating_pow(attempt - 2)
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    attempt += 1;
                    let delay = self.delay_before(attempt);
                    log::warn!("transient gateway failure ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                other => return other,
            }
        }
    }
}

/// OpenAI-compatible HTTP backend.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent,
            retry,
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base_url, key, timeout, retry)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, GatewayError> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(format!("reading body: {e}")))?;
        match status {
            200..=299 => parse_response_body(&text),
            401 | 403 => Err(GatewayError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            408 | 429 | 500..=599 => Err(GatewayError::Transport(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(GatewayError::Protocol(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = request_body(request);
        self.retry.run(|| self.attempt(&body))
    }
}

fn map_transport(err: ureq::Error) -> GatewayError {
    match err {
        ureq::Error::BadUri(u) => GatewayError::InvalidRequest(format!("bad base url: {u}")),
        ureq::Error::Json(e) => GatewayError::Protocol(e.to_string()),
        other => GatewayError::Transport(other.to_string()),
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

/// Serializes a request into the chat-completions JSON body.
pub fn request_body(request: &ChatRequest) -> Value {
    let engine = base64::engine::general_purpose::STANDARD;
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let content: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(t) => json!({"type": "text", "text": t}),
                    ContentPart::Image { data, media_type } => json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{media_type};base64,{}", engine.encode(data))}
                    }),
                })
                .collect();
            json!({"role": m.role.as_str(), "content": content})
        })
        .collect();
    json!({
        "model": request.model_id,
        "messages": messages,
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    })
}

/// Parses a chat-completions response body. Missing usage is estimated.
pub fn parse_response_body(body: &str) -> Result<ChatResponse, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Protocol(format!("invalid JSON: {e}")))?;
    let message = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| GatewayError::Protocol("missing choices[0].message".into()))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(GatewayError::Protocol(format!("unexpected content type: {other}"))),
    };
    let usage = v.get("usage").and_then(|u| {
        let p = u.get("prompt_tokens")?.as_u64()?;
        let c = u.get("completion_tokens")?.as_u64()?;
        Some(TokenUsage::new(p, c))
    });
    Ok(match usage {
        Some(usage) => ChatResponse::new(text, usage),
        None => ChatResponse::with_estimated_usage(text),
    })
}

/// One queued step of a scripted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    /// Reply with the digest of the incoming request, after an optional prefix.
    Echo {
        echo: bool,
        #[serde(default)]
        prefix: String,
    },
    Reply {
        text: String,
        #[serde(default)]
        usage: Option<TokenUsage>,
    },
}

impl ScriptStep {
    pub fn reply(text: impl Into<String>, usage: TokenUsage) -> Self {
        ScriptStep::Reply {
            text: text.into(),
            usage: Some(usage),
        }
    }

    pub fn echo() -> Self {
        ScriptStep::Echo {
            echo: true,
            prefix: String::new(),
        }
    }
}

impl From<ChatResponse> for ScriptStep {
    fn from(r: ChatResponse) -> Self {
        ScriptStep::Reply {
            text: r.text,
            usage: (!r.usage_estimated).then_some(r.usage),
        }
    }
}

/// Deterministic backend that pops one queued step per call and records every request.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<ScriptStep>>,
    served: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptStep>) -> Result<Self, GatewayError> {
        if script.is_empty() {
            return Err(GatewayError::InvalidRequest("script must not be empty".into()));
        }
        Ok(ScriptedBackend {
            queue: Mutex::new(script.into()),
            served: Mutex::new(Vec::new()),
        })
    }

    pub fn from_responses(script: Vec<ChatResponse>) -> Result<Self, GatewayError> {
        Self::new(script.into_iter().map(ScriptStep::from).collect())
    }

    /// Loads a JSON array of steps: `{"text": .., "usage": {..}}` or `{"echo": true}`.
    pub fn from_json_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidRequest(format!("reading script {}: {e}", path.display())))?;
        let steps: Vec<ScriptStep> = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::InvalidRequest(format!("parsing script {}: {e}", path.display())))?;
        Self::new(steps)
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    /// Requests served so far, in call order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.served.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.served.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let step = {
            let mut queue = self.queue.lock().unwrap();
            match queue.pop_front() {
                Some(step) => step,
                None => return Err(GatewayError::ScriptExhausted { served: self.calls() }),
            }
        };
        self.served.lock().unwrap().push(request.clone());
        Ok(match step {
            ScriptStep::Reply { text, usage: Some(u) } => ChatResponse::new(text, u),
            ScriptStep::Reply { text, usage: None } => ChatResponse::with_estimated_usage(text),
            ScriptStep::Echo { prefix, .. } => ChatResponse::with_estimated_usage(prefix + &request_digest(request)),
        })
    }
}

/// Human-readable digest of a request: roles, text verbatim, images as size + hash.
pub fn request_digest(request: &ChatRequest) -> String {
    let mut out = String::new();
    for msg in &request.messages {
        let _ = writeln!(out, "[{}]", msg.role.as_str());
        for part in &msg.parts {
            match part {
                ContentPart::Text(t) => {
                    let _ = writeln!(out, "{t}");
                }
                ContentPart::Image { data, .. } => {
                    let _ = writeln!(out, "<image {} bytes sha256:{}>", data.len(), short_hash(data));
                }
            }
        }
    }
    out
}

pub(crate) fn short_hash(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}
