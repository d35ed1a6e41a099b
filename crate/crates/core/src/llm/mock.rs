//! Offline providers: a JSON-scripted mock and a closure-backed provider.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, FinishReason, LlmError, Provider, ProviderError, TokenUsage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFault {
    RateLimit,
    Auth,
    Transient,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fault {
        error: MockFault,
        #[serde(default)]
        message: String,
    },
}

/// Script file format.
///
/// ```json
/// {
///   "by_hash": { "<prompt sha256>": "reply" },
///   "queues":  { "contract": ["first", "second"], "p1/judge": [{"error": "rate_limit"}] },
///   "default": "reply used when nothing else matches"
/// }
/// ```
///
/// Lookup order: exact prompt hash, then the `<problem_id>/<phase>` queue,
/// then the `<phase>` queue, then `default`. Queue entries are consumed in
/// order; hash entries are reusable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub by_hash: BTreeMap<String, MockReply>,
    #[serde(default)]
    pub queues: BTreeMap<String, Vec<MockReply>>,
    #[serde(default)]
    pub default: Option<MockReply>,
}

pub struct MockProvider {
    by_hash: BTreeMap<String, MockReply>,
    queues: Mutex<HashMap<String, VecDeque<MockReply>>>,
    default: Option<MockReply>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            by_hash: script.by_hash,
            queues: Mutex::new(
                script
                    .queues
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().collect()))
                    .collect(),
            ),
            default: script.default,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("mock script {}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("mock script {}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    fn lookup(&self, req: &ChatRequest) -> Option<MockReply> {
        if let Some(r) = self.by_hash.get(&req.prompt_hash()) {
            return Some(r.clone());
        }
        let mut queues = self.queues.lock().unwrap_or_else(|p| p.into_inner());
        let phase = req.tag.phase.as_str();
        for key in [format!("{}/{phase}", req.tag.problem_id), phase.to_string()] {
            if let Some(r) = queues.get_mut(&key).and_then(VecDeque::pop_front) {
                return Some(r);
            }
        }
        self.default.clone()
    }
}

fn respond(text: String) -> ChatResponse {
    ChatResponse {
        token_usage: TokenUsage { prompt: 0, completion: text.split_whitespace().count() as u64 },
        text,
        finish_reason: FinishReason::Complete,
        latency: 0.0,
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        match self.lookup(req) {
            Some(MockReply::Text(t)) => Ok(respond(t)),
            Some(MockReply::Fault { error, message }) => Err(match error {
                MockFault::RateLimit => ProviderError::RateLimited { retry_after: None },
                MockFault::Auth => ProviderError::Auth(message),
                MockFault::Transient => ProviderError::Transient(message),
                MockFault::Fatal => ProviderError::Fatal(message),
            }),
            None => Err(ProviderError::Fatal(format!(
                "mock script has no reply for prompt {} ({}/{})",
                req.prompt_hash(),
                req.tag.problem_id,
                req.tag.phase.as_str()
            ))),
        }
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync;

/// Provider whose replies are computed by a closure.
pub struct FnProvider {
    name: String,
    f: Box<ReplyFn>,
}

impl FnProvider {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), f: Box::new(f) }
    }
}

impl Provider for FnProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (self.f)(req).map(respond)
    }
}
