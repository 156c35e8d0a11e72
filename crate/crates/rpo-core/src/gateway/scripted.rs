//! Deterministic canned-response backend. A response is a pure function of
//! the request, which makes whole optimization runs reproducible offline.

use serde::{Deserialize, Serialize};

use super::{FinishReason, GatewayError, LmBackend, LmRequest, LmResponse, Usage};

/// One matching rule. A rule applies when the request tag equals `tag`
/// (if set) and the concatenated message contents contain `needle`
/// (if set). Rules are tried in order; the first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle: Option<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn for_tag(tag: impl Into<String>, response: impl Into<String>) -> Self {
        Self { tag: Some(tag.into()), needle: None, response: response.into() }
    }

    pub fn for_tag_and_needle(
        tag: impl Into<String>,
        needle: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        Self {
            tag: Some(tag.into()),
            needle: Some(needle.into()),
            response: response.into(),
        }
    }

    fn matches(&self, request: &LmRequest, haystack: &str) -> bool {
        if let Some(tag) = &self.tag {
            if tag != &request.tag {
                return false;
            }
        }
        if let Some(needle) = &self.needle {
            if !haystack.contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptRule>,
    pub default_response: String,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default_response: impl Into<String>) -> Self {
        Self { rules, default_response: default_response.into() }
    }

    /// Backend that answers everything with the same text.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(Vec::new(), response)
    }
}

impl LmBackend for ScriptedBackend {
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, GatewayError> {
        request.validate()?;
        let haystack: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let text = self
            .rules
            .iter()
            .find(|rule| rule.matches(request, &haystack))
            .map(|rule| rule.response.clone())
            .unwrap_or_else(|| self.default_response.clone());
        Ok(LmResponse {
            text,
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChatMessage;

    fn request(tag: &str, content: &str) -> LmRequest {
        LmRequest {
            model_id: "scripted".into(),
            messages: vec![ChatMessage::user(content)],
            temperature: 0.0,
            max_tokens: 64,
            tag: tag.into(),
        }
    }

    #[test]
    fn first_matching_rule_wins() {
        let backend = ScriptedBackend::new(
            vec![
                ScriptRule::for_tag_and_needle("rewriter", "beta", "SECOND"),
                ScriptRule::for_tag("rewriter", "PROMPT A"),
            ],
            "fallback",
        );
        let got = backend.complete(&request("rewriter", "alpha beta")).unwrap();
        assert_eq!(got.text, "SECOND");
        let got = backend.complete(&request("rewriter", "alpha")).unwrap();
        assert_eq!(got.text, "PROMPT A");
    }

    #[test]
    fn same_request_twice_is_identical() {
        let backend =
            ScriptedBackend::new(vec![ScriptRule::for_tag("rewriter", "PROMPT A")], "d");
        let r = request("rewriter", "anything");
        assert_eq!(backend.complete(&r).unwrap(), backend.complete(&r).unwrap());
    }

    #[test]
    fn unmatched_tag_falls_back_to_default() {
        let backend =
            ScriptedBackend::new(vec![ScriptRule::for_tag("rewriter", "PROMPT A")], "dflt");
        let got = backend.complete(&request("feedbacker", "anything")).unwrap();
        assert_eq!(got.text, "dflt");
        assert_eq!(got.usage, Usage::default());
    }
}
