//! Task bundle loading and validation.
//!
//! A bundle is a directory: `manifest.json` assigns ids, files, and splits;
//! one JSON document per task; entity databases for dialogue bundles under
//! their own files. All documents carry a `schema_version`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dialogue::{DialogueTaskPayload, EntityDb};
use super::keyword::KeywordTask;
use super::sql::ShardedSqlTask;
use super::{ENV_DIALOGUE, ENV_KEYWORD, ENV_SHARDED_SQL};
use crate::model::{Split, TaskInstance};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("bundle is invalid:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub environment_id: String,
    pub tasks: Vec<ManifestEntry>,
    #[serde(default)]
    pub dbs: BTreeMap<String, String>,
}

/// An immutable, validated set of tasks plus any entity databases they
/// reference. Shared read-only across workers.
#[derive(Debug, Clone)]
pub struct TaskBundle {
    pub environment_id: String,
    pub tasks: Vec<TaskInstance>,
    pub dbs: BTreeMap<String, EntityDb>,
}

fn read_json(path: &Path) -> Result<serde_json::Value, BundleError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|source| BundleError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&raw)
        .map_err(|e| BundleError::Malformed { path: path.to_path_buf(), message: e.to_string() })
}

impl TaskBundle {
    /// Build a bundle directly from parts (tests, generators). Validation is
    /// still the caller's responsibility via [`TaskBundle::validate`].
    pub fn from_parts(
        environment_id: impl Into<String>,
        tasks: Vec<TaskInstance>,
        dbs: BTreeMap<String, EntityDb>,
    ) -> Self {
        Self { environment_id: environment_id.into(), tasks, dbs }
    }

    /// Load a bundle directory and fully validate it.
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_value(read_json(&manifest_path)?)
            .map_err(|e| BundleError::Malformed {
                path: manifest_path.clone(),
                message: e.to_string(),
            })?;
        if manifest.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(BundleError::Malformed {
                path: manifest_path,
                message: format!(
                    "unsupported schema_version {} (expected {BUNDLE_SCHEMA_VERSION})",
                    manifest.schema_version
                ),
            });
        }

        let mut tasks = Vec::with_capacity(manifest.tasks.len());
        for entry in &manifest.tasks {
            let path = dir.join(&entry.file);
            let mut payload = read_json(&path)?;
            if let Some(object) = payload.as_object_mut() {
                object.remove("schema_version");
            }
            tasks.push(TaskInstance {
                id: entry.id.clone(),
                environment_id: manifest.environment_id.clone(),
                payload,
                split: entry.split,
            });
        }

        let mut dbs = BTreeMap::new();
        for (name, file) in &manifest.dbs {
            let path = dir.join(file);
            let mut doc = read_json(&path)?;
            if let Some(object) = doc.as_object_mut() {
                object.remove("schema_version");
            }
            let db: EntityDb = serde_json::from_value(doc).map_err(|e| BundleError::Malformed {
                path,
                message: e.to_string(),
            })?;
            dbs.insert(name.clone(), db);
        }

        let bundle = Self { environment_id: manifest.environment_id, tasks, dbs };
        let violations = bundle.validate();
        if violations.is_empty() {
            Ok(bundle)
        } else {
            Err(BundleError::Invalid(violations))
        }
    }

    /// Every problem found, one line each; empty means the bundle is sound.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();

        let mut seen = BTreeSet::new();
        for task in &self.tasks {
            if !seen.insert(task.id.clone()) {
                violations.push(format!("duplicate task id {}", task.id));
            }
        }

        for (name, db) in &self.dbs {
            for v in db.validate() {
                violations.push(format!("db {name}: {v}"));
            }
        }

        for task in &self.tasks {
            if task.environment_id != self.environment_id {
                violations.push(format!(
                    "task {}: environment {} does not match bundle {}",
                    task.id, task.environment_id, self.environment_id
                ));
                continue;
            }
            match self.environment_id.as_str() {
                ENV_SHARDED_SQL => match ShardedSqlTask::from_task(task) {
                    Err(e) => violations.push(format!("task {}: {e}", task.id)),
                    Ok(parsed) => {
                        match super::sql::exec_query(&parsed.schema_ddl, &parsed.reference_sql) {
                            Err(e) => violations.push(format!("task {}: {e}", task.id)),
                            Ok(Err(e)) => violations.push(format!(
                                "task {}: reference query fails: {}",
                                task.id, e.message
                            )),
                            Ok(Ok(_)) => {}
                        }
                    }
                },
                ENV_DIALOGUE => {
                    match serde_json::from_value::<DialogueTaskPayload>(task.payload.clone()) {
                        Err(e) => violations.push(format!("task {}: bad payload: {e}", task.id)),
                        Ok(payload) => {
                            for v in payload.goal.validate() {
                                violations.push(format!("task {}: {v}", task.id));
                            }
                            if !self.dbs.contains_key(&payload.db_ref) {
                                violations.push(format!(
                                    "task {}: unknown db_ref {}",
                                    task.id, payload.db_ref
                                ));
                            }
                        }
                    }
                }
                ENV_KEYWORD => match serde_json::from_value::<KeywordTask>(task.payload.clone()) {
                    Err(e) => violations.push(format!("task {}: bad payload: {e}", task.id)),
                    Ok(parsed) => {
                        for v in parsed.validate() {
                            violations.push(format!("task {}: {v}", task.id));
                        }
                    }
                },
                other => violations.push(format!("unknown environment id {other}")),
            }
        }
        violations
    }

    pub fn split(&self, split: Split) -> Vec<&TaskInstance> {
        self.tasks.iter().filter(|t| t.split == split).collect()
    }
}
