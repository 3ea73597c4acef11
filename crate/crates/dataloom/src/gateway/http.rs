//! OpenAI-compatible HTTP transport.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionRequest, CompletionResponse, FinishReason, Transport, TransportError};

/// Where a model role resolves to on the wire. Credentials are read from
/// the named environment variable, never from config values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

pub struct HttpTransport {
    endpoints: BTreeMap<String, EndpointConfig>,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(
        endpoints: BTreeMap<String, EndpointConfig>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Protocol(format!("client build failed: {e}")))?;
        Ok(Self { endpoints, client })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    completion_tokens: u32,
}

impl Transport for HttpTransport {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        let endpoint = self.endpoints.get(&request.model_role).ok_or_else(|| {
            TransportError::Protocol(format!(
                "no endpoint configured for model role '{}'",
                request.model_role
            ))
        })?;

        let mut body = json!({
            "model": endpoint.model,
            "messages": request
                .messages
                .iter()
                .map(|m| json!({"role": m.role.to_string(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "top_k": request.sampling.top_k,
            "max_tokens": request.sampling.max_tokens,
        });
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }

        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(&body);
        if let Some(var) = &endpoint.api_key_env {
            if let Ok(key) = std::env::var(var) {
                builder = builder.bearer_auth(key);
            }
        }

        let response = builder.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                TransportError::Unavailable(e.to_string())
            } else {
                TransportError::Protocol(e.to_string())
            }
        })?;

        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(TransportError::Unavailable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Protocol(format!("status {status}")));
        }

        let wire: WireResponse = response
            .json()
            .map_err(|e| TransportError::Protocol(format!("malformed response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::Protocol("response carried no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(CompletionResponse {
            text: choice.message.content,
            finish_reason,
            token_count: wire.usage.map(|u| u.completion_tokens).unwrap_or(0),
        })
    }
}
