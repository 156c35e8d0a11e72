//! Pluggable multi-turn environments the system agent interacts with:
//! sharded text-to-SQL, a rule-based goal-driven dialogue simulator, and a
//! synthetic keyword task used as a convergence oracle in loop tests.
//!
//! An [`Environment`] owns one episode's mutable state and lives on a single
//! worker; it is created per episode through [`EnvProvider`] from the
//! immutable task bundle, which is freely shared.

pub mod bundle;
pub mod dialogue;
pub mod keyword;
pub mod sql;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{ApiCall, Score, TaskInstance, Trajectory};

pub use bundle::TaskBundle;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state error: {0}")]
    State(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// What the environment hands the agent at episode start.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialContext {
    /// Environment-owned context appended to the instruction prompt in the
    /// system message (schema dump, API usage notes). May be empty.
    pub system_context: String,
    pub first_user_message: String,
    /// Trajectory-level goal statement, when the environment has one; never
    /// shown to the system agent.
    pub goal_text: Option<String>,
}

/// One simulated-user reaction to a system response.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepResult {
    pub user_message: String,
    pub done: bool,
    pub info: BTreeMap<String, String>,
}

impl EnvStepResult {
    fn done_with(reason: &str) -> Self {
        let mut info = BTreeMap::new();
        info.insert("terminal".to_string(), reason.to_string());
        Self { user_message: String::new(), done: true, info }
    }
}

/// One episode's worth of environment state.
pub trait Environment: Send {
    fn reset(&mut self, seed: u64) -> Result<InitialContext, EnvError>;
    fn step(&mut self, system_response: &str) -> Result<EnvStepResult, EnvError>;
    /// Execute an API call issued mid-turn; `None` when the environment has
    /// no API surface.
    fn handle_api(&mut self, call: &ApiCall) -> Option<String> {
        let _ = call;
        None
    }
}

pub const ENV_SHARDED_SQL: &str = "sharded-sql";
pub const ENV_DIALOGUE: &str = "dialogue";
pub const ENV_KEYWORD: &str = "keyword";

/// Creates per-episode environments and judges completed trajectories
/// against the bundle's fixtures. Judging is a pure function of
/// (task fixture, prompt text, trajectory): re-judging a persisted
/// trajectory reproduces its stored outcome bit for bit.
#[derive(Clone)]
pub struct EnvProvider {
    bundle: Arc<TaskBundle>,
}

impl EnvProvider {
    pub fn new(bundle: Arc<TaskBundle>) -> Self {
        Self { bundle }
    }

    pub fn bundle(&self) -> &TaskBundle {
        &self.bundle
    }

    pub fn environment_id(&self) -> &str {
        &self.bundle.environment_id
    }

    fn check_task(&self, task: &TaskInstance) -> Result<(), EnvError> {
        if task.environment_id != self.bundle.environment_id {
            return Err(EnvError::InvalidArgument(format!(
                "task {} belongs to environment {}, not {}",
                task.id, task.environment_id, self.bundle.environment_id
            )));
        }
        Ok(())
    }

    pub fn make_env(&self, task: &TaskInstance) -> Result<Box<dyn Environment>, EnvError> {
        self.check_task(task)?;
        match task.environment_id.as_str() {
            ENV_SHARDED_SQL => Ok(Box::new(sql::SqlEnv::from_task(task)?)),
            ENV_DIALOGUE => Ok(Box::new(dialogue::DialogueEnv::from_task(
                task,
                &self.bundle.dbs,
            )?)),
            ENV_KEYWORD => Ok(Box::new(keyword::KeywordEnv::from_task(task)?)),
            other => Err(EnvError::InvalidArgument(format!(
                "unknown environment id {other}"
            ))),
        }
    }

    pub fn judge(
        &self,
        task: &TaskInstance,
        prompt_text: &str,
        trajectory: &Trajectory,
    ) -> Result<Score, EnvError> {
        self.check_task(task)?;
        if !trajectory.turns.iter().any(|t| t.terminal) {
            return Err(EnvError::State(
                "cannot judge an incomplete trajectory (no terminal turn)".into(),
            ));
        }
        match task.environment_id.as_str() {
            ENV_SHARDED_SQL => sql::judge(task, trajectory),
            ENV_DIALOGUE => dialogue::judge(task, &self.bundle.dbs, trajectory),
            ENV_KEYWORD => keyword::judge(task, prompt_text),
            other => Err(EnvError::InvalidArgument(format!(
                "unknown environment id {other}"
            ))),
        }
    }
}

/// Parse the first `API: name(k=v, ...)` line out of a system response.
/// Malformed lines are ignored rather than rejected; the agent simply made
/// no usable call.
pub fn parse_api_call(text: &str) -> Option<ApiCall> {
    for line in text.lines() {
        let trimmed = line.trim();
        let Some(rest) = trimmed.strip_prefix("API:") else {
            continue;
        };
        let rest = rest.trim();
        let open = rest.find('(')?;
        if !rest.ends_with(')') {
            return None;
        }
        let name = rest[..open].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return None;
        }
        let inner = &rest[open + 1..rest.len() - 1];
        let mut arguments = BTreeMap::new();
        for part in inner.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let Some((key, value)) = part.split_once('=') else {
                return None;
            };
            arguments.insert(key.trim().to_string(), value.trim().to_string());
        }
        return Some(ApiCall { name: name.to_string(), arguments });
    }
    None
}
