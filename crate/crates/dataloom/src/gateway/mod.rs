//! Minimal chat-completions client with explicit error semantics.
//!
//! The gateway never caches and never deduplicates: N identical calls
//! produce N transport invocations. Failed requests are retried with
//! exponential backoff up to a fixed budget, after which the error is
//! surfaced and the run halts by default.

mod http;
mod replay;
mod testing;

pub use http::{EndpointConfig, HttpTransport};
pub use replay::{parse_store_line, RecordTransport, ReplayStore, ReplayTransport, StoredCall};
pub use testing::ScriptedTransport;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Speaker of a chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::System => write!(f, "system"),
            Role::User => write!(f, "user"),
            Role::Assistant => write!(f, "assistant"),
            Role::Tool => write!(f, "tool"),
        }
    }
}

/// A role-tagged chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self { role: Role::Tool, content: content.into() }
    }
}

/// Sampling parameters carried per request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.6, top_p: 0.95, top_k: 20, max_tokens: 4096 }
    }
}

/// One chat-completions request addressed to a configured model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_role: String,
    pub messages: Vec<Message>,
    pub sampling: SamplingParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn new(model_role: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model_role: model_role.into(),
            messages,
            sampling: SamplingParams::default(),
            stop: Vec::new(),
        }
    }

    pub fn with_sampling(mut self, sampling: SamplingParams) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        let s = &self.sampling;
        if !s.temperature.is_finite() || s.temperature < 0.0 {
            return Err(RequestError::Temperature(s.temperature));
        }
        if !s.top_p.is_finite() || s.top_p <= 0.0 || s.top_p > 1.0 {
            return Err(RequestError::TopP(s.top_p));
        }
        if s.max_tokens < 1 {
            return Err(RequestError::MaxTokens(s.max_tokens));
        }
        if self.messages.is_empty() {
            return Err(RequestError::EmptyMessages);
        }
        Ok(())
    }

    /// Canonical replay key: a digest over model role, messages, sampling,
    /// and stop conditions. Anything that can change the endpoint's output
    /// is part of the key.
    pub fn canonical_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serialization is infallible");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RequestError {
    #[error("temperature must be finite and >= 0, got {0}")]
    Temperature(f64),
    #[error("top-p must be in (0, 1], got {0}")]
    TopP(f64),
    #[error("max-tokens must be >= 1, got {0}")]
    MaxTokens(u32),
    #[error("request has no messages")]
    EmptyMessages,
}

/// Why the endpoint stopped generating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub token_count: u32,
}

/// One attempt against the configured endpoint. Implementations must not
/// cache or deduplicate requests.
pub trait Transport: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError>;
}

#[derive(Debug, Error, Clone)]
pub enum TransportError {
    /// Transient failure (timeout, connection refused, 5xx). Retryable.
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
    /// Request key not present in the replay store. Not retryable.
    #[error("replay miss for request key {0}")]
    ReplayMiss(String),
    /// The endpoint answered but the exchange was malformed. Not retryable.
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Fixed retry budget with exponential backoff, then halt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 200, max_delay_ms: 10_000 }
    }
}

impl RetryPolicy {
    fn delay_before(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.min(16);
        Duration::from_millis((self.base_delay_ms.saturating_mul(factor)).min(self.max_delay_ms))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
    #[error("endpoint unavailable after {attempts} attempts: {last_error}")]
    EndpointUnavailable { attempts: u32, last_error: String },
    #[error("replay miss for request key {0}")]
    ReplayMiss(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

struct InFlightLimit {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    fn new(max: usize) -> Self {
        Self { permits: Mutex::new(max.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().expect("limiter poisoned");
        while *permits == 0 {
            permits = self.freed.wait(permits).expect("limiter poisoned");
        }
        *permits -= 1;
    }

    fn release(&self) {
        let mut permits = self.permits.lock().expect("limiter poisoned");
        *permits += 1;
        self.freed.notify_one();
    }
}

/// Chat-completions client: one transport, one retry policy, an optional
/// global in-flight limit. No cache sits between callers and the transport.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limit: Option<InFlightLimit>,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, retry: RetryPolicy) -> Self {
        Self { transport, retry, limit: None }
    }

    /// Cap the number of concurrently outstanding requests.
    pub fn with_in_flight_limit(mut self, max: usize) -> Self {
        self.limit = Some(InFlightLimit::new(max));
        self
    }

    pub fn transport_name(&self) -> &str {
        self.transport.name()
    }

    pub fn chat_complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        if let Some(limit) = &self.limit {
            limit.acquire();
        }
        let result = self.attempt_loop(request);
        if let Some(limit) = &self.limit {
            limit.release();
        }
        result
    }

    fn attempt_loop(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, GatewayError> {
        let mut last_error = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay_before(attempt - 1));
            }
            match self.transport.send(request) {
                Ok(response) => return Ok(response),
                Err(TransportError::Unavailable(reason)) => {
                    log::warn!(
                        "attempt {}/{} against {} failed: {reason}",
                        attempt + 1,
                        self.retry.max_attempts,
                        self.transport.name()
                    );
                    last_error = reason;
                }
                Err(TransportError::ReplayMiss(key)) => {
                    return Err(GatewayError::ReplayMiss(key))
                }
                Err(TransportError::Protocol(reason)) => {
                    return Err(GatewayError::Protocol(reason))
                }
            }
        }
        Err(GatewayError::EndpointUnavailable {
            attempts: self.retry.max_attempts,
            last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> CompletionRequest {
        CompletionRequest::new("generator", vec![Message::user("hello")])
    }

    #[test]
    fn default_sampling_matches_documented_values() {
        let s = SamplingParams::default();
        assert_eq!(s.temperature, 0.6);
        assert_eq!(s.top_p, 0.95);
        assert_eq!(s.top_k, 20);
    }

    #[test]
    fn request_invariants_are_enforced() {
        let mut req = request();
        req.sampling.temperature = -0.1;
        assert_eq!(req.validate(), Err(RequestError::Temperature(-0.1)));

        let mut req = request();
        req.sampling.top_p = 0.0;
        assert!(matches!(req.validate(), Err(RequestError::TopP(_))));

        let mut req = request();
        req.sampling.top_p = 1.0;
        assert!(req.validate().is_ok());

        let mut req = request();
        req.sampling.max_tokens = 0;
        assert_eq!(req.validate(), Err(RequestError::MaxTokens(0)));
    }

    #[test]
    fn canonical_hash_changes_with_sampling_and_stop() {
        let base = request();
        let mut hotter = request();
        hotter.sampling.temperature = 0.9;
        let mut stopped = request();
        stopped.stop = vec!["</done>".into()];

        assert_ne!(base.canonical_hash(), hotter.canonical_hash());
        assert_ne!(base.canonical_hash(), stopped.canonical_hash());
        assert_eq!(base.canonical_hash(), request().canonical_hash());
    }

    #[test]
    fn transient_failures_are_retried_then_succeed() {
        let transport = Arc::new(ScriptedTransport::new());
        transport.push_err(TransportError::Unavailable("down".into()));
        transport.push_err(TransportError::Unavailable("down".into()));
        transport.push_text("recovered");

        let gateway = Gateway::new(
            transport.clone(),
            RetryPolicy { max_attempts: 3, base_delay_ms: 0, max_delay_ms: 0 },
        );
        let response = gateway.chat_complete(&request()).expect("third attempt succeeds");
        assert_eq!(response.text, "recovered");
        assert_eq!(transport.call_count(), 3);
    }

    #[test]
    fn retry_exhaustion_surfaces_a_halting_error() {
        let transport = Arc::new(ScriptedTransport::new());
        for _ in 0..3 {
            transport.push_err(TransportError::Unavailable("down".into()));
        }
        let gateway = Gateway::new(
            transport,
            RetryPolicy { max_attempts: 3, base_delay_ms: 0, max_delay_ms: 0 },
        );
        match gateway.chat_complete(&request()) {
            Err(GatewayError::EndpointUnavailable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected EndpointUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn identical_calls_each_reach_the_transport() {
        let transport = Arc::new(ScriptedTransport::new());
        for i in 0..5 {
            transport.push_text(format!("r{i}"));
        }
        let gateway = Gateway::new(transport.clone(), RetryPolicy::default());
        for _ in 0..5 {
            gateway.chat_complete(&request()).unwrap();
        }
        assert_eq!(transport.call_count(), 5);
    }
}
