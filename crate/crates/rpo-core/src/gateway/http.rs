//! Chat-completion HTTP backend.
//!
//! Wire protocol: POST `base_url + path` with a JSON body of
//! `{model, messages: [{role, content}], temperature, max_tokens}`;
//! the reply is read from `choices[0].message.content`, the finish reason
//! from `choices[0].finish_reason`, usage from `usage.prompt_tokens` /
//! `usage.completion_tokens`. Credentials come from the environment
//! variable named in the config and are sent as a bearer token.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{FinishReason, GatewayError, LmBackend, LmRequest, LmResponse, Usage};
use crate::model::Role;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    /// Name of the environment variable holding the API key; no variable
    /// means no Authorization header (local gateways).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Upper bound on simultaneous in-flight provider calls.
    #[serde(default = "default_max_inflight")]
    pub max_inflight: u32,
}

fn default_path() -> String {
    "/v1/chat/completions".to_string()
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_inflight() -> u32 {
    4
}

/// Counting semaphore bounding concurrent provider calls.
struct Gate {
    slots: Mutex<u32>,
    freed: Condvar,
}

impl Gate {
    fn new(slots: u32) -> Self {
        Self { slots: Mutex::new(slots.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut slots = self.gate.slots.lock().unwrap();
        *slots += 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let gate = Gate::new(config.max_inflight);
        Self { config, agent, gate }
    }

    fn endpoint(&self) -> String {
        format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.path
        )
    }

    fn api_key(&self) -> Result<Option<String>, GatewayError> {
        match &self.config.key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                GatewayError::InvalidRequest(format!(
                    "credential environment variable {var} is not set"
                ))
            }),
        }
    }
}

fn role_label(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

fn classify(err: ureq::Error) -> GatewayError {
    match err {
        // Rate limits and server-side failures are worth retrying.
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            GatewayError::Transport { attempts: 1, message: format!("http status {code}") }
        }
        ureq::Error::StatusCode(code) => {
            GatewayError::Protocol(format!("http status {code}"))
        }
        ureq::Error::Io(e) => {
            GatewayError::Transport { attempts: 1, message: format!("io: {e}") }
        }
        ureq::Error::Timeout(t) => {
            GatewayError::Transport { attempts: 1, message: format!("timeout: {t}") }
        }
        ureq::Error::HostNotFound => {
            GatewayError::Transport { attempts: 1, message: "host not found".into() }
        }
        other => GatewayError::Protocol(other.to_string()),
    }
}

fn parse_finish_reason(raw: Option<&str>) -> FinishReason {
    match raw {
        Some("length") | Some("max_tokens") => FinishReason::Length,
        Some("error") | Some("content_filter") => FinishReason::Error,
        _ => FinishReason::Stop,
    }
}

impl LmBackend for HttpBackend {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, GatewayError> {
        request.validate()?;
        let body = json!({
            "model": request.model_id,
            "messages": request
                .messages
                .iter()
                .map(|m| json!({"role": role_label(m.role), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });

        let _slot = self.gate.acquire();
        let mut builder = self.agent.post(self.endpoint());
        if let Some(key) = self.api_key()? {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = builder.send_json(&body).map_err(classify)?;
        let payload: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| GatewayError::Protocol(format!("unreadable response body: {e}")))?;

        let choice = payload
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| GatewayError::Protocol("response has no choices[0]".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                GatewayError::Protocol("response has no choices[0].message.content".into())
            })?
            .to_string();
        let finish_reason =
            parse_finish_reason(choice.get("finish_reason").and_then(|v| v.as_str()));
        let usage = Usage {
            prompt_units: payload
                .pointer("/usage/prompt_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
            completion_units: payload
                .pointer("/usage/completion_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
        };
        Ok(LmResponse { text, finish_reason, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_joins_base_and_path() {
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: "http://localhost:9999/".into(),
            path: "/v1/chat/completions".into(),
            key_env: None,
            timeout_ms: 50,
            max_inflight: 2,
        });
        assert_eq!(backend.endpoint(), "http://localhost:9999/v1/chat/completions");
    }

    #[test]
    fn unreachable_host_is_a_transport_error() {
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: "http://127.0.0.1:1".into(),
            path: default_path(),
            key_env: None,
            timeout_ms: 200,
            max_inflight: 1,
        });
        let req = LmRequest {
            model_id: "m".into(),
            messages: vec![crate::model::ChatMessage::user("hi")],
            temperature: 0.0,
            max_tokens: 8,
            tag: "system-agent".into(),
        };
        match backend.complete(&req) {
            Err(GatewayError::Transport { .. }) => {}
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn missing_credential_variable_is_reported() {
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: "http://127.0.0.1:1".into(),
            path: default_path(),
            key_env: Some("RPO_TEST_NO_SUCH_KEY_VAR".into()),
            timeout_ms: 200,
            max_inflight: 1,
        });
        let req = LmRequest {
            model_id: "m".into(),
            messages: vec![crate::model::ChatMessage::user("hi")],
            temperature: 0.0,
            max_tokens: 8,
            tag: "system-agent".into(),
        };
        assert!(matches!(
            backend.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn gate_restores_slots_after_use() {
        let gate = Gate::new(1);
        {
            let _g = gate.acquire();
        }
        let _g2 = gate.acquire();
    }
}
