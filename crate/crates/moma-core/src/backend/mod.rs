//! Uniform completion interface: every model call flows through here so
//! that accounting and replay are total. Two implementations ship — a live
//! HTTP chat endpoint and a deterministic scripted replayer.

mod live;
mod scripted;

pub use live::{LiveBackend, LiveConfig};
pub use scripted::{ScriptReply, ScriptedBackend};

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::accounting::{CallEntry, CallLog};
use crate::types::ChatMessage;

/// Generation parameters for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
    /// Excluded from the request fingerprint; used to diversify SC samples.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

/// Named defaults for the two model families the harness targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelProfile {
    Gpt35Turbo,
    Llama3Instruct,
}

impl ModelProfile {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gpt-3.5-turbo-0125" | "gpt" => Some(ModelProfile::Gpt35Turbo),
            "llama-3-8b-instruct" | "llama" => Some(ModelProfile::Llama3Instruct),
            _ => None,
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            ModelProfile::Gpt35Turbo => "gpt-3.5-turbo-0125",
            ModelProfile::Llama3Instruct => "llama-3-8b-instruct",
        }
    }

    /// Deterministic temperatures: 0 for the GPT profile, 0.01 for Llama.
    pub fn default_temperature(&self) -> f64 {
        match self {
            ModelProfile::Gpt35Turbo => 0.0,
            ModelProfile::Llama3Instruct => 0.01,
        }
    }

    pub fn default_params(&self) -> GenParams {
        GenParams {
            temperature: self.default_temperature(),
            max_tokens: 512,
            model_name: self.model_name().to_string(),
            seed: None,
        }
    }
}

/// Token usage reported (live) or synthesized (scripted) for a completion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One model completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Content-addressed digest of a request: ordered messages plus params,
/// excluding the seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestFingerprint(pub String);

impl std::fmt::Display for RequestFingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Stable across process restarts; sensitive to any message or param change
/// other than the seed.
pub fn fingerprint(messages: &[ChatMessage], params: &GenParams) -> RequestFingerprint {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.to_string().as_bytes());
        hasher.update([0x1f]);
        hasher.update(m.content.as_bytes());
        hasher.update([0x1e]);
    }
    hasher.update(params.model_name.as_bytes());
    hasher.update([0x1f]);
    hasher.update(format!("{}", params.temperature).as_bytes());
    hasher.update([0x1f]);
    hasher.update(params.max_tokens.to_le_bytes());
    RequestFingerprint(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("http error {status}")]
    HttpError { status: u16 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("scripted backend has no entry for fingerprint {0}")]
    ScriptMiss(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl BackendError {
    /// Only timeouts, rate limits and 5xx are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::RateLimited { .. } => true,
            BackendError::HttpError { status } => *status >= 500,
            _ => false,
        }
    }
}

/// The completion interface. Implementations must be callable from many
/// workers concurrently.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> Result<Completion, BackendError>;

    /// True when repeated identical runs are byte-identical (scripted).
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Retry policy for transient backend failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff_ms: 500, jitter: true }
    }
}

impl RetryPolicy {
    /// No sleeping, no jitter; what scripted runs use.
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, base_backoff_ms: 0, jitter: false }
    }
}

/// Runs `request` under the policy, retrying only transient errors with
/// exponential backoff. Returns the completion together with the number of
/// attempts spent; surfaces the last error after exhaustion.
pub fn with_retry<F>(policy: &RetryPolicy, mut request: F) -> (Result<Completion, BackendError>, u32)
where
    F: FnMut() -> Result<Completion, BackendError>,
{
    assert!(policy.max_attempts >= 1, "retry policy requires max_attempts >= 1");
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match request() {
            Ok(c) => return (Ok(c), attempt),
            Err(e) if e.is_retryable() && attempt < policy.max_attempts => {
                let mut delay = policy.base_backoff_ms.saturating_mul(1 << (attempt - 1));
                if let BackendError::RateLimited { retry_after_ms: Some(ms) } = &e {
                    delay = delay.max(*ms);
                }
                if policy.jitter && delay > 0 {
                    delay += rand::random::<u64>() % (delay / 2 + 1);
                }
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(e) => return (Err(e), attempt),
        }
    }
}

/// A backend plus the run-level call log and retry policy. Cheap to share.
#[derive(Clone)]
pub struct Session {
    backend: Arc<dyn Backend>,
    log: Arc<CallLog>,
    policy: RetryPolicy,
}

impl Session {
    pub fn new(backend: Arc<dyn Backend>, log: Arc<CallLog>, policy: RetryPolicy) -> Self {
        Self { backend, log, policy }
    }

    /// Session over a scripted backend with immediate retries.
    pub fn scripted(backend: Arc<ScriptedBackend>) -> Self {
        Self::new(backend, Arc::new(CallLog::new()), RetryPolicy::immediate(3))
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn log(&self) -> &Arc<CallLog> {
        &self.log
    }

    pub fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    /// Scope subsequent calls to one (method, item) pair.
    pub fn for_item(&self, method: impl Into<String>, item_id: impl Into<String>) -> ItemCtx<'_> {
        ItemCtx {
            session: self,
            method: method.into(),
            item_id: item_id.into(),
            local: Mutex::new(Vec::new()),
        }
    }
}

/// Call context for one (method, item) pair. Every call is appended both to
/// the run-level log and to a local list that ends up in the answer record.
pub struct ItemCtx<'a> {
    session: &'a Session,
    method: String,
    item_id: String,
    local: Mutex<Vec<CallEntry>>,
}

impl ItemCtx<'_> {
    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    /// One logical call: retries fold into the attempt count, and exactly one
    /// log entry is appended whether the call returns or terminally fails.
    pub fn call(
        &self,
        stage: &str,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> Result<Completion, BackendError> {
        let (result, attempts) = self.call_raw(messages, params);
        match &result {
            Ok(c) => self.log_call(stage, attempts, c.usage, c.latency_ms),
            Err(_) => self.log_call(stage, attempts, TokenUsage::default(), 0),
        }
        result
    }

    /// Retrying call without logging. Agent stages that re-ask with a
    /// corrective instruction use this to merge re-asks into one logical
    /// entry via [`ItemCtx::log_call`].
    pub fn call_raw(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> (Result<Completion, BackendError>, u32) {
        let backend = &self.session.backend;
        with_retry(&self.session.policy, || backend.complete(messages, params))
    }

    pub fn log_call(&self, stage: &str, attempts: u32, usage: TokenUsage, latency_ms: u64) {
        let entry = CallEntry {
            method: self.method.clone(),
            item_id: self.item_id.clone(),
            stage: stage.to_string(),
            attempts,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms,
        };
        self.session.log.append(entry.clone());
        self.local.lock().expect("local call list poisoned").push(entry);
    }

    /// Entries logged under this context, in call order.
    pub fn entries(&self) -> Vec<CallEntry> {
        self.local.lock().expect("local call list poisoned").clone()
    }
}
