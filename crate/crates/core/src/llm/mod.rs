//! Chat-completion client with crash-safe transcripts, bounded retries and
//! pluggable providers.
//!
//! Transcript layout: `<dir>/<problem_id>/<phase>.jsonl`, one JSON event per
//! line. A `request` event is flushed to disk before each dispatch attempt; a
//! `response` or `error` event follows it.

mod http;
mod mock;
pub mod prompts;

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::sha256_hex;
pub use http::HttpProvider;
pub use mock::{FnProvider, MockProvider, MockReply, MockScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Contract,
    Case,
    Judge,
    Other,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Contract => "contract",
            Phase::Case => "case",
            Phase::Judge => "judge",
            Phase::Other => "other",
        }
    }
}

/// Where a request belongs in the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub problem_id: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("message list is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hash of the message list; the key used by mock scripts.
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.messages)
    }
}

pub fn prompt_hash(messages: &[Message]) -> String {
    sha256_hex(&serde_json::to_vec(messages).expect("messages serialize"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Length,
    Other,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub token_usage: TokenUsage,
    /// Seconds.
    pub latency: f64,
}

/// Failure reported by a provider for one attempt.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("provider failed after {attempts} attempts: {message}")]
    Provider { attempts: u32, message: String },
    #[error("transcript write failed: {0}")]
    Transcript(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.saturating_sub(1).min(16));
        hint.unwrap_or(Duration::ZERO).max(exp).min(self.max_delay)
    }
}

/// Minimum spacing between dispatches, shared by every client using the same
/// provider name in this process.
fn pace(provider: &str, min_interval: Duration) {
    static NEXT: Mutex<Option<HashMap<String, Instant>>> = Mutex::new(None);
    if min_interval.is_zero() {
        return;
    }
    let wait = {
        let mut guard = NEXT.lock().unwrap_or_else(|p| p.into_inner());
        let map = guard.get_or_insert_with(HashMap::new);
        let now = Instant::now();
        let slot = map.get(provider).copied().unwrap_or(now).max(now);
        map.insert(provider.to_string(), slot + min_interval);
        slot - now
    };
    thread::sleep(wait);
}

fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

fn path_component(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if cleaned.is_empty() || cleaned.starts_with('.') {
        format!("_{cleaned}")
    } else {
        cleaned
    }
}

#[derive(Clone)]
pub struct Client {
    provider: Arc<dyn Provider>,
    transcript_dir: Option<PathBuf>,
    retry: RetryPolicy,
    min_interval: Duration,
    model_id: String,
    write_lock: Arc<Mutex<()>>,
}

impl Client {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self {
            model_id: provider.name().to_string(),
            provider,
            transcript_dir: None,
            retry: RetryPolicy::default(),
            min_interval: Duration::ZERO,
            write_lock: Arc::new(Mutex::new(())),
        }
    }

    pub fn with_transcripts(mut self, dir: impl Into<PathBuf>) -> Self {
        self.transcript_dir = Some(dir.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_min_interval(mut self, interval: Duration) -> Self {
        self.min_interval = interval;
        self
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn transcript_path(&self, tag: &RequestTag) -> Option<PathBuf> {
        self.transcript_dir.as_ref().map(|d| {
            d.join(path_component(&tag.problem_id))
                .join(format!("{}.jsonl", tag.phase.as_str()))
        })
    }

    fn record(&self, path: Option<&Path>, event: serde_json::Value) -> std::io::Result<()> {
        let Some(path) = path else { return Ok(()) };
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut line = serde_json::to_vec(&event).map_err(std::io::Error::other)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.sync_data()
    }

    /// Sends `req`, retrying rate limits and transient failures with
    /// exponential backoff.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let path = self.transcript_path(&req.tag);
        let hash = req.prompt_hash();
        let mut last_rate_limited = false;
        let mut last_message = String::new();
        for attempt in 1..=self.retry.max_attempts {
            self.record(
                path.as_deref(),
                json!({"event": "request", "time": unix_time(), "attempt": attempt,
                       "provider": self.provider.name(), "prompt_hash": hash, "request": req}),
            )?;
            pace(self.provider.name(), self.min_interval);
            let started = Instant::now();
            let outcome = self.provider.send(req);
            match outcome {
                Ok(mut resp) => {
                    if resp.latency == 0.0 {
                        resp.latency = started.elapsed().as_secs_f64();
                    }
                    self.record(
                        path.as_deref(),
                        json!({"event": "response", "time": unix_time(), "attempt": attempt,
                               "prompt_hash": hash, "response": resp}),
                    )?;
                    return Ok(resp);
                }
                Err(err) => {
                    self.record(
                        path.as_deref(),
                        json!({"event": "error", "time": unix_time(), "attempt": attempt,
                               "prompt_hash": hash, "error": err.to_string()}),
                    )?;
                    let hint = match &err {
                        ProviderError::Auth(m) => return Err(LlmError::Config(m.clone())),
                        ProviderError::Fatal(m) => {
                            return Err(LlmError::Provider { attempts: attempt, message: m.clone() })
                        }
                        ProviderError::RateLimited { retry_after } => {
                            last_rate_limited = true;
                            *retry_after
                        }
                        ProviderError::Transient(m) => {
                            last_rate_limited = false;
                            last_message = m.clone();
                            None
                        }
                    };
                    if attempt < self.retry.max_attempts {
                        thread::sleep(self.retry.delay(attempt, hint));
                    }
                }
            }
        }
        let attempts = self.retry.max_attempts;
        if last_rate_limited {
            Err(LlmError::RateLimited { attempts })
        } else {
            Err(LlmError::Provider { attempts, message: last_message })
        }
    }
}

/// Builds a client from the environment.
///
/// `STRESSBENCH_LLM_MOCK=<script.json>` selects the scripted mock; otherwise
/// an OpenAI-compatible endpoint is configured by `STRESSBENCH_LLM_BASE_URL`,
/// `STRESSBENCH_LLM_API_KEY` (or `OPENAI_API_KEY`) and `STRESSBENCH_LLM_MODEL`.
pub fn client_from_env() -> Result<Client, LlmError> {
    if let Ok(path) = std::env::var("STRESSBENCH_LLM_MOCK") {
        let mock = MockProvider::from_file(Path::new(&path))?;
        return Ok(Client::new(Arc::new(mock)));
    }
    let http = HttpProvider::from_env()?;
    let model = http.model().to_string();
    let interval = std::env::var("STRESSBENCH_LLM_MIN_INTERVAL_MS")
        .ok()
        .and_then(|v| v.parse().ok())
        .map(Duration::from_millis)
        .unwrap_or(Duration::ZERO);
    Ok(Client::new(Arc::new(http)).with_model(model).with_min_interval(interval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![Message::user(text)],
            temperature: 0.0,
            max_tokens: 64,
            model_id: "m".into(),
            tag: RequestTag { problem_id: "p/1".into(), phase: Phase::Judge },
        }
    }

    #[test]
    fn request_invariants() {
        let mut r = req("x");
        assert!(r.validate().is_ok());
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
        r.temperature = 0.7;
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn backoff_is_bounded_and_growing() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(1),
        };
        assert_eq!(p.delay(1, None), Duration::from_millis(100));
        assert_eq!(p.delay(2, None), Duration::from_millis(200));
        assert_eq!(p.delay(3, None), Duration::from_millis(400));
        assert_eq!(p.delay(9, None), Duration::from_secs(1));
        assert_eq!(p.delay(1, Some(Duration::from_millis(700))), Duration::from_millis(700));
    }

    #[test]
    fn transcript_path_is_sanitized() {
        let c = Client::new(Arc::new(MockProvider::new(MockScript::default()))).with_transcripts("/t");
        let r = req("x");
        assert_eq!(c.transcript_path(&r.tag).unwrap(), PathBuf::from("/t/p_1/judge.jsonl"));
    }
}
