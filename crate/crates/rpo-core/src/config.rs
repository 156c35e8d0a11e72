//! Run configuration: the optimization protocol knobs, per-agent-role model
//! bindings, backend selection, and template overrides. Config files are
//! JSON mirroring these field names.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feedback::{FeedbackStyle, SignalSet};
use crate::gateway::{
    HttpBackend, HttpBackendConfig, RetryPolicy, RoleBinding, ScriptRule, ScriptedBackend,
    SharedBackend,
};
use crate::rewriter::RewriteMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("config is invalid: {0}")]
    Invalid(String),
}

/// Model parameters for the four agent roles. Defaults: deterministic
/// feedback (t=0.0), exploratory rewriting (t=1.0), moderate sampling for
/// the system agent and prompt writer (t=0.7).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleBindings {
    #[serde(default = "default_system_binding")]
    pub system: RoleBinding,
    #[serde(default = "default_feedbacker_binding")]
    pub feedbacker: RoleBinding,
    #[serde(default = "default_rewriter_binding")]
    pub rewriter: RoleBinding,
    #[serde(default = "default_system_binding")]
    pub prompt_writer: RoleBinding,
}

fn default_system_binding() -> RoleBinding {
    RoleBinding::default_for("system")
}
fn default_feedbacker_binding() -> RoleBinding {
    RoleBinding::default_for("feedbacker")
}
fn default_rewriter_binding() -> RoleBinding {
    RoleBinding::default_for("rewriter")
}

impl Default for RoleBindings {
    fn default() -> Self {
        Self {
            system: default_system_binding(),
            feedbacker: default_feedbacker_binding(),
            rewriter: default_rewriter_binding(),
            prompt_writer: default_system_binding(),
        }
    }
}

/// Which completion backend a run talks to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Inline deterministic rules.
    Scripted {
        #[serde(default)]
        rules: Vec<ScriptRule>,
        default_response: String,
    },
    /// Rules loaded from a JSON file (a serialized `ScriptedBackend`).
    ScriptedFile { path: String },
    Http(HttpBackendConfig),
}

impl BackendSpec {
    pub fn build(&self, base_dir: &Path) -> Result<SharedBackend, ConfigError> {
        match self {
            BackendSpec::Scripted { rules, default_response } => Ok(Arc::new(
                ScriptedBackend::new(rules.clone(), default_response.clone()),
            )),
            BackendSpec::ScriptedFile { path } => {
                let full = base_dir.join(path);
                let raw = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                    path: full.display().to_string(),
                    source,
                })?;
                let backend: ScriptedBackend =
                    serde_json::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
                Ok(Arc::new(backend))
            }
            BackendSpec::Http(config) => Ok(Arc::new(HttpBackend::new(config.clone()))),
        }
    }
}

fn default_batch_size() -> u32 {
    10
}
fn default_k() -> u32 {
    2
}
fn default_validation_size() -> u32 {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4]
}
fn default_gamma() -> f64 {
    1.0
}
fn default_history_budget() -> u32 {
    8
}
fn default_bundle_dir() -> String {
    "bundle".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub environment_id: String,
    pub feedback_style: FeedbackStyle,
    pub rewrite_mode: RewriteMode,
    #[serde(default)]
    pub signals: SignalSet,
    #[serde(default = "default_batch_size")]
    pub batch_size: u32,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_validation_size")]
    pub validation_size: u32,
    pub epochs: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_history_budget")]
    pub history_budget: u32,
    /// Keep the incumbent when every candidate scores below it. Off by
    /// default: the incumbent is replaced by the best new candidate even if
    /// that candidate scores lower.
    #[serde(default)]
    pub keep_incumbent: bool,
    /// Bundle directory, relative to the run directory unless absolute.
    #[serde(default = "default_bundle_dir")]
    pub bundle_dir: String,
    #[serde(default)]
    pub roles: RoleBindings,
    pub backend: BackendSpec,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Template name -> file path, relative to the run directory.
    #[serde(default)]
    pub template_overrides: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run_id.is_empty() {
            return Err(ConfigError::Invalid("run_id must be non-empty".into()));
        }
        if self.batch_size < 1 {
            return Err(ConfigError::Invalid("batch_size must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(ConfigError::Invalid("k must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(ConfigError::Invalid("epochs must be >= 1".into()));
        }
        if self.validation_size < 1 {
            return Err(ConfigError::Invalid("validation_size must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::Invalid("gamma must be in [0,1]".into()));
        }
        if self.history_budget < 1 {
            return Err(ConfigError::Invalid("history_budget must be >= 1".into()));
        }
        if self.feedback_style == FeedbackStyle::Human {
            return Err(ConfigError::Invalid(
                "feedback_style human is not a generation mode; \
                 record human feedback through the review flow instead"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig =
            serde_json::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Stable digest of the whole config; runs sharing it are comparable.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short label for reports: feedback style plus rewrite mode.
    pub fn method_label(&self) -> String {
        let style = match self.feedback_style {
            FeedbackStyle::Mc => "mc",
            FeedbackStyle::Td => "td",
            FeedbackStyle::Numeric => "numeric",
            FeedbackStyle::BinaryLabel => "binary_label",
            FeedbackStyle::Human => "human",
        };
        let mode = match self.rewrite_mode {
            RewriteMode::Basic => "basic",
            RewriteMode::Replay => "replay",
        };
        format!("{style}+{mode}")
    }
}
