//! Shared, immutable domain vocabulary: prompts, messages, turns,
//! trajectories, task instances, and scores.
//!
//! Everything here is a value object. Once constructed, nothing is mutated;
//! all types are `Send + Sync` and safe to share across workers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Content-addressed identifier of a prompt text: lowercase hex SHA-256 of
/// the exact UTF-8 bytes of the text, no normalization. Equal texts always
/// yield equal ids; ids are stable across runs and across versions of this
/// crate.
pub fn prompt_id(text: &str) -> Result<String, ModelError> {
    if text.is_empty() {
        return Err(ModelError::InvalidArgument(
            "prompt text must be non-empty".into(),
        ));
    }
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    Ok(out)
}

/// How a prompt version came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SeedExpert,
    SeedGenerated,
    Rewritten,
}

/// An epoch-indexed instruction text — the "parameter" being optimized.
///
/// Epoch-1 prompts are seeds and have no parent; rewritten prompts always
/// point at the incumbent they were derived from, so lineage forms a forest
/// rooted at seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub id: String,
    pub epoch: u32,
    pub text: String,
    pub parent_id: Option<String>,
    pub provenance: Provenance,
}

impl PromptVersion {
    /// A seed prompt for epoch 1.
    pub fn seed(text: impl Into<String>, provenance: Provenance) -> Result<Self, ModelError> {
        let text = text.into();
        if provenance == Provenance::Rewritten {
            return Err(ModelError::InvalidArgument(
                "seed prompts must have seed provenance".into(),
            ));
        }
        Ok(Self {
            id: prompt_id(&text)?,
            epoch: 1,
            text,
            parent_id: None,
            provenance,
        })
    }

    /// A rewritten prompt that becomes the incumbent at `epoch`.
    pub fn rewritten(
        text: impl Into<String>,
        epoch: u32,
        parent_id: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let text = text.into();
        if epoch < 2 {
            return Err(ModelError::InvalidArgument(
                "rewritten prompts start at epoch 2".into(),
            ));
        }
        Ok(Self {
            id: prompt_id(&text)?,
            epoch,
            text,
            parent_id: Some(parent_id.into()),
            provenance: Provenance::Rewritten,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// One message in a chat-completion conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
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

/// A structured call the system agent made against the environment,
/// parsed out of its plain-text response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCall {
    pub name: String,
    pub arguments: BTreeMap<String, String>,
}

impl ApiCall {
    /// Render as `name(k=v, k2=v2)` with arguments in key order.
    pub fn render(&self) -> String {
        let args: Vec<String> = self
            .arguments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}({})", self.name, args.join(", "))
    }
}

/// One exchange: a user utterance followed by the system response, plus any
/// API call the system issued while producing that response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u32,
    pub user_utterance: String,
    pub system_response: String,
    pub api_call: Option<ApiCall>,
    pub api_result: Option<String>,
    pub terminal: bool,
}

/// Outcome metric kinds. `SuccessBinary` values are exactly 0.0 or 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    SuccessBinary,
    FunctionalAccuracy,
    Scalar,
}

impl ScoreKind {
    /// Human-readable metric name used in reports and numeric feedback.
    pub fn metric_name(&self) -> &'static str {
        match self {
            ScoreKind::SuccessBinary => "success rate",
            ScoreKind::FunctionalAccuracy => "functional accuracy",
            ScoreKind::Scalar => "score",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub kind: ScoreKind,
    pub value: f64,
}

impl Score {
    pub fn new(kind: ScoreKind, value: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ModelError::InvalidArgument(format!(
                "score value {value} outside [0,1]"
            )));
        }
        if kind == ScoreKind::SuccessBinary && value != 0.0 && value != 1.0 {
            return Err(ModelError::InvalidArgument(format!(
                "success_binary score must be 0.0 or 1.0, got {value}"
            )));
        }
        Ok(Self { kind, value })
    }

    pub fn success(success: bool) -> Self {
        Self { kind: ScoreKind::SuccessBinary, value: if success { 1.0 } else { 0.0 } }
    }
}

/// One complete multi-turn episode collected with a specific prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub prompt_id: String,
    pub environment_id: String,
    pub task_instance_id: String,
    pub goal_text: Option<String>,
    pub turns: Vec<Turn>,
    pub outcome: Option<Score>,
    pub seed: u64,
}

/// Check every trajectory invariant; returns one description per violation.
/// An empty list means the trajectory is well-formed. Violations are data,
/// not failures.
pub fn validate_trajectory(t: &Trajectory) -> Vec<String> {
    let mut violations = Vec::new();
    for (pos, turn) in t.turns.iter().enumerate() {
        let expected = (pos + 1) as u32;
        if turn.index != expected {
            violations.push(format!("turn index gap at position {expected}"));
            break;
        }
    }
    let terminal_count = t.turns.iter().filter(|turn| turn.terminal).count();
    if terminal_count > 1 {
        violations.push("multiple terminal turns".to_string());
    }
    for turn in &t.turns {
        if turn.api_result.is_some() && turn.api_call.is_none() {
            violations.push(format!(
                "turn {}: api_result present without api_call",
                turn.index
            ));
        }
    }
    if t.outcome.is_some() && terminal_count == 0 {
        violations.push("outcome set without a terminal turn".to_string());
    }
    if let Some(score) = &t.outcome {
        if Score::new(score.kind, score.value).is_err() {
            violations.push(format!("outcome value {} violates score kind", score.value));
        }
    }
    violations
}

/// Train / validation / test assignment of a task instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One task drawn from a bundle; the payload is environment-specific.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub environment_id: String,
    pub payload: serde_json::Value,
    pub split: Split,
}
