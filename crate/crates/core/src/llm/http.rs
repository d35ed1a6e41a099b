//! OpenAI-compatible chat-completions endpoint.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, FinishReason, LlmError, Provider, ProviderError, TokenUsage};

pub struct HttpProvider {
    base_url: String,
    api_key: String,
    model: String,
    agent: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Result<Self, LlmError> {
        let agent = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            agent,
        })
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let key = std::env::var("STRESSBENCH_LLM_API_KEY")
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .map_err(|_| {
                LlmError::Config(
                    "no LLM credentials: set STRESSBENCH_LLM_API_KEY (or OPENAI_API_KEY), \
                     or STRESSBENCH_LLM_MOCK=<script.json> for offline runs"
                        .into(),
                )
            })?;
        let base = std::env::var("STRESSBENCH_LLM_BASE_URL")
            .unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var("STRESSBENCH_LLM_MODEL").unwrap_or_else(|_| "gpt-4o".into());
        Self::new(base, key, model)
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

fn parse_reply(body: &Value) -> Result<ChatResponse, ProviderError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::Fatal("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishReason::Complete,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Other,
    };
    let usage = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse {
        text,
        finish_reason,
        token_usage: TokenUsage { prompt: usage("prompt_tokens"), completion: usage("completion_tokens") },
        latency: 0.0,
    })
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let model = if req.model_id.is_empty() { &self.model } else { &req.model_id };
        let started = Instant::now();
        let resp = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&json!({
                "model": model,
                "messages": req.messages,
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
            }))
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(ProviderError::RateLimited { retry_after });
        }
        let body = resp.text().map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("HTTP {status}: {body}")));
        }
        if status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("HTTP {status}: {body}")));
        }
        let value: Value = serde_json::from_str(&body).map_err(|e| ProviderError::Fatal(e.to_string()))?;
        let mut reply = parse_reply(&value)?;
        reply.latency = started.elapsed().as_secs_f64();
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_completion_body() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": "assert n > 0"}, "finish_reason": "length"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 4}
        });
        let r = parse_reply(&body).unwrap();
        assert_eq!(r.text, "assert n > 0");
        assert_eq!(r.finish_reason, FinishReason::Length);
        assert_eq!(r.token_usage, TokenUsage { prompt: 12, completion: 4 });
        assert!(parse_reply(&json!({"choices": []})).is_err());
    }
}
