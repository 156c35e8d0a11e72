//! Synthetic single-turn task whose score is a pure function of the
//! instruction prompt: the fraction of required keywords the prompt
//! contains. Used as a convergence oracle for end-to-end loop tests.

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvStepResult, Environment, InitialContext};
use crate::model::{Score, ScoreKind, TaskInstance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTask {
    pub required_keywords: Vec<String>,
}

impl KeywordTask {
    pub fn from_task(task: &TaskInstance) -> Result<Self, EnvError> {
        let parsed: KeywordTask = serde_json::from_value(task.payload.clone())
            .map_err(|e| EnvError::InvalidArgument(format!("bad keyword task payload: {e}")))?;
        let violations = parsed.validate();
        if !violations.is_empty() {
            return Err(EnvError::InvalidArgument(violations.join("; ")));
        }
        Ok(parsed)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.required_keywords.is_empty() {
            violations.push("required_keywords must be non-empty".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for keyword in &self.required_keywords {
            if keyword.is_empty() {
                violations.push("empty keyword".to_string());
            }
            if !seen.insert(keyword) {
                violations.push(format!("duplicate keyword {keyword}"));
            }
        }
        violations
    }
}

pub struct KeywordEnv {
    started: bool,
    finished: bool,
}

impl KeywordEnv {
    pub fn from_task(task: &TaskInstance) -> Result<Self, EnvError> {
        KeywordTask::from_task(task)?;
        Ok(Self { started: false, finished: false })
    }
}

impl Environment for KeywordEnv {
    fn reset(&mut self, _seed: u64) -> Result<InitialContext, EnvError> {
        self.started = true;
        self.finished = false;
        Ok(InitialContext {
            system_context: String::new(),
            first_user_message: "begin".to_string(),
            goal_text: None,
        })
    }

    fn step(&mut self, _system_response: &str) -> Result<EnvStepResult, EnvError> {
        if !self.started || self.finished {
            return Err(EnvError::State("episode is not active".into()));
        }
        self.finished = true;
        Ok(EnvStepResult::done_with("single-turn"))
    }
}

/// Fraction of required keywords present in the instruction prompt used for
/// the episode.
pub fn judge(task: &TaskInstance, prompt_text: &str) -> Result<Score, EnvError> {
    let parsed = KeywordTask::from_task(task)?;
    let present = parsed
        .required_keywords
        .iter()
        .filter(|k| prompt_text.contains(k.as_str()))
        .count();
    Ok(Score {
        kind: ScoreKind::Scalar,
        value: present as f64 / parsed.required_keywords.len() as f64,
    })
}
