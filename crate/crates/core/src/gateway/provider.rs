use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionRequest, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderFailure {
    Auth(String),
    RateLimited(String),
    /// Retryable server-side failure (5xx, connection reset).
    Transient(String),
    Timeout,
    /// Non-retryable failure (other 4xx, undecodable body).
    Fatal(String),
}

impl ProviderFailure {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderFailure::RateLimited(_)
                | ProviderFailure::Transient(_)
                | ProviderFailure::Timeout
        )
    }
}

impl fmt::Display for ProviderFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderFailure::Auth(m) => write!(f, "auth: {m}"),
            ProviderFailure::RateLimited(m) => write!(f, "rate limited: {m}"),
            ProviderFailure::Transient(m) => write!(f, "transient: {m}"),
            ProviderFailure::Timeout => f.write_str("timeout"),
            ProviderFailure::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

pub trait Provider: Send + Sync {
    fn send(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderFailure>;
}

/// OpenAI-compatible `/chat/completions` endpoint (OpenAI, OpenRouter, most
/// self-hosted servers).
pub struct HttpProvider {
    endpoint: String,
    remote_model: String,
    api_key_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        remote_model: impl Into<String>,
        api_key_env: Option<String>,
        timeout: Duration,
    ) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpProvider {
            endpoint: endpoint.into(),
            remote_model: remote_model.into(),
            api_key_env: api_key_env.filter(|s| !s.is_empty()),
            client,
        })
    }

    fn body(&self, req: &CompletionRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.prompt.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.prompt.user}));
        let mut body = json!({"model": self.remote_model, "messages": messages});
        if let Some(t) = req.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(effort) = req.reasoning_effort {
            body["reasoning_effort"] = json!(effort.as_str());
        }
        if let Some(max) = req.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }
}

fn usage_field(usage: &Value, names: &[&str]) -> u64 {
    names
        .iter()
        .find_map(|n| usage.get(*n).and_then(Value::as_u64))
        .unwrap_or(0)
}

impl Provider for HttpProvider {
    fn send(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderFailure> {
        let mut builder = self.client.post(&self.endpoint).json(&self.body(req));
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| {
                ProviderFailure::Auth(format!("environment variable {var} is not set"))
            })?;
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                ProviderFailure::Timeout
            } else {
                ProviderFailure::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                ProviderFailure::Timeout
            } else {
                ProviderFailure::Transient(e.to_string())
            }
        })?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(ProviderFailure::Auth(format!("HTTP {status}: {text}"))),
            408 => return Err(ProviderFailure::Timeout),
            429 => return Err(ProviderFailure::RateLimited(text)),
            500..=599 => return Err(ProviderFailure::Transient(format!("HTTP {status}: {text}"))),
            _ => return Err(ProviderFailure::Fatal(format!("HTTP {status}: {text}"))),
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderFailure::Fatal(format!("undecodable response: {e}")))?;
        let content = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                ProviderFailure::Fatal("response has no choices[0].message.content".into())
            })?;
        let usage = body.get("usage").cloned().unwrap_or(Value::Null);
        Ok(ProviderReply {
            text: content.to_string(),
            usage: TokenUsage {
                input: usage_field(&usage, &["prompt_tokens", "input_tokens"]),
                output: usage_field(&usage, &["completion_tokens", "output_tokens"]),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatedFailure {
    Auth,
    RateLimited,
    Timeout,
    Server,
    Fatal,
}

impl SimulatedFailure {
    fn to_failure(self) -> ProviderFailure {
        match self {
            SimulatedFailure::Auth => ProviderFailure::Auth("scripted".into()),
            SimulatedFailure::RateLimited => ProviderFailure::RateLimited("scripted".into()),
            SimulatedFailure::Timeout => ProviderFailure::Timeout,
            SimulatedFailure::Server => ProviderFailure::Transient("scripted 503".into()),
            SimulatedFailure::Fatal => ProviderFailure::Fatal("scripted 400".into()),
        }
    }
}

/// A reply keyed on substrings of the user prompt: the first rule whose
/// needles all occur wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: Vec<String>,
    pub reply: String,
    #[serde(default)]
    pub fail_first: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<SimulatedFailure>,
}

impl ScriptRule {
    pub fn reply(needles: &[&str], reply: impl Into<String>) -> Self {
        ScriptRule {
            contains: needles.iter().map(|s| s.to_string()).collect(),
            reply: reply.into(),
            fail_first: 0,
            failure: None,
        }
    }

    /// Fails the first `n` matching calls before replying.
    pub fn failing_first(mut self, n: u32, failure: SimulatedFailure) -> Self {
        self.fail_first = n;
        self.failure = Some(failure);
        self
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|n| prompt.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
}

/// Offline provider replaying canned replies. Token usage is a whitespace
/// word count of prompt and reply.
pub struct ScriptedProvider {
    rules: Vec<(ScriptRule, AtomicU32)>,
    default: Option<String>,
    calls: AtomicU64,
    seen: Mutex<Vec<String>>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>, default: Option<String>) -> Self {
        ScriptedProvider {
            rules: rules.into_iter().map(|r| (r, AtomicU32::new(0))).collect(),
            default,
            calls: AtomicU64::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Reads `{"rules": [...], "default": "..."}` from a JSON file.
    pub fn from_file(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let script: Script =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::new(script.rules, script.default))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// User prompts received, in arrival order.
    pub fn seen_prompts(&self) -> Vec<String> {
        self.seen.lock().expect("poisoned").clone()
    }
}

impl Provider for ScriptedProvider {
    fn send(&self, req: &CompletionRequest) -> Result<ProviderReply, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = &req.prompt.user;
        self.seen.lock().expect("poisoned").push(prompt.clone());
        let reply = match self.rules.iter().find(|(r, _)| r.matches(prompt)) {
            Some((rule, hits)) => {
                let n = hits.fetch_add(1, Ordering::SeqCst);
                if let Some(failure) = rule.failure {
                    if n < rule.fail_first {
                        return Err(failure.to_failure());
                    }
                }
                rule.reply.clone()
            }
            None => self.default.clone().ok_or_else(|| {
                ProviderFailure::Fatal("no scripted reply matches the prompt".into())
            })?,
        };
        Ok(ProviderReply {
            usage: TokenUsage {
                input: prompt.split_whitespace().count() as u64,
                output: reply.split_whitespace().count() as u64,
            },
            text: reply,
        })
    }
}
