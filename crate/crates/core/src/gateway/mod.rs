//! Provider-agnostic chat-completion dispatch with a content-addressed
//! response cache, bounded retries and cost accounting.

mod cache;
mod config;
mod cost;
mod provider;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::PromptBundle;

pub use cache::{CacheRecord, CacheStore};
pub use config::{load_provider_config, ModelEntry, ProviderConfig, ProviderKind};
pub use cost::{cost_ledger, CostReport, ModelCost};
pub use provider::{
    HttpProvider, Provider, ProviderFailure, ProviderReply, ScriptRule, ScriptedProvider,
    SimulatedFailure,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("authentication failed for {model}: {message}")]
    AuthError { model: String, message: String },
    #[error("rate limited by provider for {model} after {attempts} attempts")]
    RateLimited { model: String, attempts: u32 },
    #[error("provider error for {model}: {message}")]
    ProviderError { model: String, message: String },
    #[error("request to {model} timed out after {attempts} attempts")]
    Timeout { model: String, attempts: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no provider configured for model {0:?}")]
    UnknownModel(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("config: {0}")]
    Config(String),
}

impl GatewayError {
    /// Errors caused by configuration rather than the remote side.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            GatewayError::InvalidRequest(_)
                | GatewayError::UnknownModel(_)
                | GatewayError::Config(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: PromptBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

impl CompletionRequest {
    /// Temperature 0.0, no reasoning effort.
    pub fn new(model_id: impl Into<String>, prompt: PromptBundle) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            prompt,
            temperature: Some(0.0),
            reasoning_effort: None,
            max_output_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_some() && self.reasoning_effort.is_some() {
            return Err(GatewayError::InvalidRequest(
                "temperature and reasoning_effort are mutually exclusive".into(),
            ));
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(GatewayError::InvalidRequest(format!(
                    "temperature {t} outside [0, 2]"
                )));
            }
        }
        if self.max_output_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        if self.prompt.user.is_empty() {
            return Err(GatewayError::InvalidRequest("empty user prompt".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub model_id: String,
    pub cache_key: String,
    pub cached: bool,
    pub token_usage: TokenUsage,
    pub cost_estimate: f64,
    pub latency_ms: u64,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_id: &'a str,
    system: Option<&'a str>,
    user: &'a str,
    temperature: Option<f64>,
    reasoning_effort: Option<&'a str>,
    max_output_tokens: Option<u32>,
}

/// SHA-256 over a canonical JSON encoding of everything that reaches the
/// provider. Absent and zero temperature encode differently (`null` vs `0.0`).
pub fn cache_key(req: &CompletionRequest) -> String {
    let material = KeyMaterial {
        model_id: &req.model_id,
        system: req.prompt.system.as_deref(),
        user: &req.prompt.user,
        temperature: req.temperature,
        reasoning_effort: req.reasoning_effort.map(ReasoningEffort::as_str),
        max_output_tokens: req.max_output_tokens,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Price per 1K tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Price {
    pub fn cost(&self, usage: TokenUsage) -> f64 {
        usage.input as f64 / 1000.0 * self.input_per_1k
            + usage.output as f64 / 1000.0 * self.output_per_1k
    }
}

/// What callers need from a gateway; lets normalizers and event strategies
/// run against any dispatcher.
pub trait Completer: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError>;

    /// Defaults applied to requests for `model_id` (temperature or effort).
    fn request_for(&self, model_id: &str, prompt: PromptBundle) -> CompletionRequest {
        CompletionRequest::new(model_id, prompt)
    }
}

struct Route {
    provider: Arc<dyn Provider>,
    price: Price,
    reasoning: bool,
}

pub struct Gateway {
    routes: HashMap<String, Route>,
    cache: CacheStore,
    retry: RetryPolicy,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    requests: AtomicU64,
    dispatches: AtomicU64,
}

impl Gateway {
    pub fn new(cache: CacheStore) -> Self {
        Gateway {
            routes: HashMap::new(),
            cache,
            retry: RetryPolicy::default(),
            key_locks: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
            dispatches: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Routes `model_id` to `provider`. Reasoning models get
    /// `reasoning_effort = medium` by default instead of temperature 0.
    pub fn with_model(
        mut self,
        model_id: impl Into<String>,
        provider: Arc<dyn Provider>,
        price: Price,
        reasoning: bool,
    ) -> Self {
        self.routes.insert(
            model_id.into(),
            Route {
                provider,
                price,
                reasoning,
            },
        );
        self
    }

    /// Builds a gateway from a provider config file's entries.
    pub fn from_config(
        config: &ProviderConfig,
        cache: CacheStore,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        let mut gw = Gateway::new(cache).with_retry(retry);
        for (model_id, entry) in &config.models {
            let provider = entry.build_provider(model_id, &retry)?;
            gw = gw.with_model(model_id.clone(), provider, entry.price(), entry.reasoning);
        }
        Ok(gw)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    pub fn has_model(&self, model_id: &str) -> bool {
        self.routes.contains_key(model_id)
    }

    /// Number of `complete` calls, cached or not.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Number of requests that reached a provider (retries count once).
    pub fn dispatches(&self) -> u64 {
        self.dispatches.load(Ordering::SeqCst)
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().expect("key lock table poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }

    fn dispatch(
        &self,
        route: &Route,
        req: &CompletionRequest,
    ) -> Result<ProviderReply, GatewayError> {
        let model = req.model_id.clone();
        let mut attempt = 0u32;
        loop {
            let failure = match route.provider.send(req) {
                Ok(reply) => return Ok(reply),
                Err(f) => f,
            };
            let retryable = failure.is_transient();
            if !retryable || attempt >= self.retry.max_retries {
                let attempts = attempt + 1;
                return Err(match failure {
                    ProviderFailure::Auth(message) => GatewayError::AuthError { model, message },
                    ProviderFailure::RateLimited(_) => {
                        GatewayError::RateLimited { model, attempts }
                    }
                    ProviderFailure::Timeout => GatewayError::Timeout { model, attempts },
                    ProviderFailure::Transient(message) | ProviderFailure::Fatal(message) => {
                        GatewayError::ProviderError { model, message }
                    }
                });
            }
            let delay = self.retry.delay(attempt);
            log::debug!("{model}: transient failure ({failure}); retrying in {delay:?}");
            thread::sleep(delay);
            attempt += 1;
        }
    }
}

impl Completer for Gateway {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        let route = self
            .routes
            .get(&req.model_id)
            .ok_or_else(|| GatewayError::UnknownModel(req.model_id.clone()))?;
        let key = cache_key(req);

        // One in-flight dispatch per key; later callers read the stored record.
        let lock = self.key_lock(&key);
        let _guard = lock.lock().expect("per-key lock poisoned");

        if let Some(record) = self.cache.get(&key)? {
            return Ok(CompletionResult {
                text: record.response,
                model_id: req.model_id.clone(),
                cache_key: key,
                cached: true,
                token_usage: record.usage,
                cost_estimate: record.cost,
                latency_ms: record.latency_ms,
            });
        }

        self.dispatches.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let reply = self.dispatch(route, req)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let cost = route.price.cost(reply.usage);
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.cache.put(&CacheRecord {
            key: key.clone(),
            request: req.clone(),
            response: reply.text.clone(),
            usage: reply.usage,
            cost,
            latency_ms,
            timestamp,
        })?;
        Ok(CompletionResult {
            text: reply.text,
            model_id: req.model_id.clone(),
            cache_key: key,
            cached: false,
            token_usage: reply.usage,
            cost_estimate: cost,
            latency_ms,
        })
    }

    fn request_for(&self, model_id: &str, prompt: PromptBundle) -> CompletionRequest {
        let mut req = CompletionRequest::new(model_id, prompt);
        if self.routes.get(model_id).is_some_and(|r| r.reasoning) {
            req.temperature = None;
            req.reasoning_effort = Some(ReasoningEffort::Medium);
        }
        req
    }
}
