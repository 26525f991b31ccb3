//! Live HTTP backend speaking the de-facto chat-completions JSON schema.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, Completion, GenParams, TokenUsage};
use crate::types::ChatMessage;

pub const API_KEY_ENV: &str = "MOMA_API_KEY";
pub const API_BASE_ENV: &str = "MOMA_API_BASE";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    /// Cap on in-flight requests.
    pub max_in_flight: usize,
    pub request_timeout: Duration,
}

impl LiveConfig {
    /// Reads endpoint and credentials from `MOMA_API_BASE` / `MOMA_API_KEY`.
    pub fn from_env() -> Result<Self, String> {
        let base_url = std::env::var(API_BASE_ENV)
            .map_err(|_| format!("{API_BASE_ENV} is not set"))?;
        let api_key =
            std::env::var(API_KEY_ENV).map_err(|_| format!("{API_KEY_ENV} is not set"))?;
        Ok(Self { base_url, api_key, max_in_flight: 4, request_timeout: Duration::from_secs(60) })
    }
}

/// Counting semaphore; std has no blocking semaphore for stable Rust.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore poisoned") += 1;
        self.sem.available.notify_one();
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .expect("reqwest client");
        let semaphore = Semaphore::new(config.max_in_flight.max(1));
        Self { config, client, semaphore }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Serializes a request to the wire body; also used by tests to pin the
    /// schema (`temperature` must appear even at 0).
    pub fn request_body(messages: &[ChatMessage], params: &GenParams) -> serde_json::Value {
        json!({
            "model": params.model_name,
            "messages": messages
                .iter()
                .map(|m| json!({"role": m.role.to_string(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        })
    }
}

impl Backend for LiveBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> Result<Completion, BackendError> {
        let _permit = self.semaphore.acquire();
        let body = Self::request_body(messages, params);
        let started = Instant::now();
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout
                } else {
                    BackendError::Transport(e.to_string())
                }
            })?;

        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after_ms = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(|secs| secs * 1000);
            return Err(BackendError::RateLimited { retry_after_ms });
        }
        if !status.is_success() {
            return Err(BackendError::HttpError { status: status.as_u16() });
        }

        let latency_ms = started.elapsed().as_millis() as u64;
        let parsed: ApiResponse = response
            .json()
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let text = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(Completion {
            text,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            latency_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ModelProfile;

    #[test]
    fn request_body_pins_wire_schema() {
        let params = ModelProfile::Gpt35Turbo.default_params();
        let body = LiveBackend::request_body(&[ChatMessage::user("hi")], &params);
        // temperature 0 must be present in the body, not omitted.
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], "gpt-3.5-turbo-0125");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(body["max_tokens"], 512);
    }

    #[test]
    fn llama_profile_default_temperature() {
        let params = ModelProfile::Llama3Instruct.default_params();
        let body = LiveBackend::request_body(&[ChatMessage::user("hi")], &params);
        assert_eq!(body["temperature"], 0.01);
    }
}
