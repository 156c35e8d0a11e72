//! Uniform interface to language models: a deterministic scripted backend
//! for tests and offline runs, and an HTTP chat-completion backend for real
//! providers, with bounded retries and per-call usage accounting.

mod http;
mod scripted;

pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{ScriptRule, ScriptedBackend};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ChatMessage;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl GatewayError {
    fn transient(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// One model call: who it is for (`tag`), what to send, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Free-form purpose label ("feedbacker", "rewriter", "system-agent", ...)
    /// preserved through the run log for per-agent usage accounting.
    pub tag: String,
}

impl LmRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_units: u64,
    pub completion_units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// A completion backend. Handles are shared across concurrent workers;
/// each `complete` call is independent.
pub trait LmBackend: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, GatewayError>;
}

pub type SharedBackend = Arc<dyn LmBackend>;

/// Retry policy for one logical request. `backoff_ms[i]` is the sleep before
/// retry i+1; the last entry repeats when attempts exceed the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(default)]
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: vec![250, 1000, 4000] }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self { max_attempts: 1, backoff_ms: Vec::new() }
    }

    fn backoff_for(&self, completed_attempts: u32) -> Option<std::time::Duration> {
        if self.backoff_ms.is_empty() {
            return None;
        }
        let idx = (completed_attempts as usize - 1).min(self.backoff_ms.len() - 1);
        Some(std::time::Duration::from_millis(self.backoff_ms[idx]))
    }
}

/// Run `call` until it succeeds or `max_attempts` is exhausted. Only
/// transient (transport) failures are retried; protocol and argument errors
/// propagate immediately. The terminal transport error carries the total
/// attempt count.
pub fn with_retry<F>(policy: &RetryPolicy, mut call: F) -> Result<LmResponse, GatewayError>
where
    F: FnMut() -> Result<LmResponse, GatewayError>,
{
    if policy.max_attempts < 1 {
        return Err(GatewayError::InvalidRequest("max_attempts must be >= 1".into()));
    }
    let mut last_message = String::new();
    for attempt in 1..=policy.max_attempts {
        match call() {
            Ok(response) => return Ok(response),
            Err(err) if err.transient() => {
                last_message = err.to_string();
                if attempt < policy.max_attempts {
                    if let Some(delay) = policy.backoff_for(attempt) {
                        std::thread::sleep(delay);
                    }
                }
            }
            Err(err) => return Err(err),
        }
    }
    Err(GatewayError::Transport { attempts: policy.max_attempts, message: last_message })
}

/// One request/response pair as it went over the gateway, kept for the run
/// log: the tag makes per-agent accounting possible, `attempts` counts
/// provider calls spent on this logical request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: String,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub attempts: u32,
}

/// Per-agent-role request parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RoleBinding {
    /// Defaults per role: deterministic feedback evaluation, exploratory
    /// rewriting, moderate sampling for the system agent.
    pub fn default_for(role: &str) -> Self {
        let temperature = match role {
            "feedbacker" => 0.0,
            "rewriter" => 1.0,
            _ => 0.7,
        };
        Self { model_id: "scripted".into(), temperature, max_tokens: 2048 }
    }
}

/// A backend handle bound to one agent role's parameters and retry policy.
/// Every call appends a `CallRecord` to the caller-supplied sink, which the
/// optimizer later writes to the run log in deterministic order.
#[derive(Clone)]
pub struct LmClient {
    backend: SharedBackend,
    binding: RoleBinding,
    retry: RetryPolicy,
}

impl LmClient {
    pub fn new(backend: SharedBackend, binding: RoleBinding, retry: RetryPolicy) -> Self {
        Self { backend, binding, retry }
    }

    pub fn binding(&self) -> &RoleBinding {
        &self.binding
    }

    pub fn call(
        &self,
        tag: &str,
        messages: Vec<ChatMessage>,
        records: &mut Vec<CallRecord>,
    ) -> Result<LmResponse, GatewayError> {
        let request = LmRequest {
            model_id: self.binding.model_id.clone(),
            messages,
            temperature: self.binding.temperature,
            max_tokens: self.binding.max_tokens,
            tag: tag.to_string(),
        };
        request.validate()?;
        let mut attempts = 0u32;
        let result = with_retry(&self.retry, || {
            attempts += 1;
            self.backend.complete(&request)
        });
        let response = result?;
        records.push(CallRecord {
            tag: request.tag.clone(),
            model_id: request.model_id.clone(),
            messages: request.messages.clone(),
            response_text: response.text.clone(),
            finish_reason: response.finish_reason,
            usage: response.usage,
            attempts,
        });
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flaky_call(remaining_failures: &mut u32) -> Result<LmResponse, GatewayError> {
        if *remaining_failures > 0 {
            *remaining_failures -= 1;
            Err(GatewayError::Transport { attempts: 1, message: "boom".into() })
        } else {
            Ok(LmResponse {
                text: "ok".into(),
                finish_reason: FinishReason::Stop,
                usage: Usage::default(),
            })
        }
    }

    #[test]
    fn retry_succeeds_on_third_attempt() {
        let policy = RetryPolicy { max_attempts: 3, backoff_ms: vec![] };
        let mut failures = 2;
        let mut calls = 0;
        let out = with_retry(&policy, || {
            calls += 1;
            flaky_call(&mut failures)
        })
        .unwrap();
        assert_eq!(out.text, "ok");
        assert_eq!(calls, 3);
    }

    #[test]
    fn retry_reports_attempt_count_when_exhausted() {
        let policy = RetryPolicy { max_attempts: 2, backoff_ms: vec![] };
        let mut failures = 10;
        let err = with_retry(&policy, || flaky_call(&mut failures)).unwrap_err();
        match err {
            GatewayError::Transport { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("unexpected error: {other}"),
        }
        assert_eq!(failures, 10 - 2);
    }

    #[test]
    fn retry_single_attempt_success_is_one_call() {
        let policy = RetryPolicy { max_attempts: 1, backoff_ms: vec![] };
        let mut failures = 0;
        let mut calls = 0;
        with_retry(&policy, || {
            calls += 1;
            flaky_call(&mut failures)
        })
        .unwrap();
        assert_eq!(calls, 1);
    }

    #[test]
    fn protocol_errors_are_not_retried() {
        let policy = RetryPolicy { max_attempts: 5, backoff_ms: vec![] };
        let mut calls = 0;
        let err = with_retry(&policy, || {
            calls += 1;
            Err(GatewayError::Protocol("bad payload".into()))
        })
        .unwrap_err();
        assert!(matches!(err, GatewayError::Protocol(_)));
        assert_eq!(calls, 1);
    }

    #[test]
    fn request_validation_rejects_empty_messages() {
        let req = LmRequest {
            model_id: "m".into(),
            messages: vec![],
            temperature: 0.0,
            max_tokens: 16,
            tag: "t".into(),
        };
        assert!(req.validate().is_err());
    }
}
