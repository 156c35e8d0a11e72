//! Run persistence: an append-only JSONL record stream per seed, atomic at
//! record granularity, plus human-review records and the writer lock.
//!
//! Every record line carries `schema_version`, `run_id`, `epoch`, a
//! monotonic `seq`, and a typed body. Loading verifies sequence contiguity;
//! a torn final line is reported and ignored (the last complete record
//! wins), while a gap or mid-file damage is a corruption error.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::feedback::{EpochFeedback, FeedbackStyle};
use crate::gateway::CallRecord;
use crate::model::{PromptVersion, Score, Trajectory};
use crate::rewriter::CandidatePrompt;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run log corrupted: {0}")]
    Corruption(String),
    #[error("run {0} not found")]
    NotFound(String),
    #[error("run directory is locked by another writer ({0})")]
    Locked(String),
    #[error("state error: {0}")]
    State(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Everything one epoch produced, as kept in the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub incumbent_prompt_id: String,
    pub batch_trajectory_ids: Vec<String>,
    pub feedback_style: FeedbackStyle,
    pub candidates: Vec<CandidatePrompt>,
    pub selected_index: u32,
    pub selected_prompt_id: String,
    /// True when every rewrite failed and the incumbent was carried over.
    pub skipped: bool,
}

/// Scores one prompt earned on the validation split, task by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub epoch: u32,
    /// Candidate position within the epoch; absent for the epoch-0 baseline
    /// evaluation of the initial prompt.
    pub candidate_index: Option<u32>,
    pub prompt_id: String,
    pub per_task: Vec<(String, f64)>,
    pub mean: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum RecordBody {
    Config { config: RunConfig, seed: u64, config_digest: String },
    Prompt { prompt: PromptVersion },
    Trajectory { trajectory: Trajectory },
    Feedback { feedback: EpochFeedback },
    Candidate { candidate: CandidatePrompt },
    Evaluation { evaluation: EvaluationRecord },
    LmCall { phase: String, call: CallRecord },
    Warning { message: String },
    EpochSummary { record: EpochRecord },
    CurvePoint { epoch: u32, score: f64 },
    RunComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEnvelope {
    pub schema_version: u32,
    pub run_id: String,
    pub epoch: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: RecordBody,
}

/// Full reproducible record of one seed's run, reconstructed from its
/// record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: RunConfig,
    pub config_digest: String,
    pub seed: u64,
    pub epoch_records: Vec<EpochRecord>,
    /// (epoch, validation score), starting at epoch 0 for the initial
    /// prompt.
    pub training_curve: Vec<(u32, f64)>,
    pub complete: bool,
}

/// Result of reading a record stream: the records, the byte offset just
/// past the last complete record, and a report if a torn tail was dropped.
#[derive(Debug)]
pub struct ReadOutcome {
    pub records: Vec<RecordEnvelope>,
    pub end_offset: u64,
    pub truncated_tail: Option<String>,
}

pub fn read_records(path: &Path) -> Result<ReadOutcome, StoreError> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    let mut end_offset = 0u64;
    let mut truncated_tail = None;
    let mut cursor = raw.as_str();
    while !cursor.is_empty() {
        let (line, line_len, complete_line) = match cursor.find('\n') {
            Some(pos) => (&cursor[..pos], pos as u64 + 1, true),
            None => (cursor, cursor.len() as u64, false),
        };
        if line.trim().is_empty() {
            offset += line_len;
            cursor = &cursor[line_len as usize..];
            continue;
        }
        match serde_json::from_str::<RecordEnvelope>(line) {
            Ok(envelope) => {
                if !complete_line {
                    // Parsed but unterminated: treat as torn (the writer
                    // appends the newline in the same write).
                    truncated_tail =
                        Some(format!("unterminated final record at byte {offset}"));
                    break;
                }
                records.push(envelope);
                offset += line_len;
                end_offset = offset;
            }
            Err(e) => {
                let at_end = cursor[line_len as usize..].trim().is_empty();
                if at_end {
                    truncated_tail = Some(format!(
                        "dropped torn final record at byte {offset}: {e}"
                    ));
                    break;
                }
                return Err(StoreError::Corruption(format!(
                    "record at byte {offset} does not parse: {e}"
                )));
            }
        }
        cursor = &cursor[line_len as usize..];
    }
    for (i, record) in records.iter().enumerate() {
        if record.seq != i as u64 {
            return Err(StoreError::Corruption(format!(
                "sequence gap: expected seq {i}, found {}",
                record.seq
            )));
        }
    }
    Ok(ReadOutcome { records, end_offset, truncated_tail })
}

/// Append-only writer over one seed's record stream. Each record is one
/// line, written and flushed in a single call.
pub struct RecordWriter {
    path: PathBuf,
    file: std::fs::File,
    run_id: String,
    next_seq: u64,
}

impl RecordWriter {
    /// Open for appending; `next_seq` must continue the existing stream.
    pub fn open(path: &Path, run_id: &str, next_seq: u64) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file, run_id: run_id.to_string(), next_seq })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, epoch: u32, body: RecordBody) -> Result<u64, StoreError> {
        let envelope = RecordEnvelope {
            schema_version: RECORD_SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            epoch,
            seq: self.next_seq,
            body,
        };
        let mut line = serde_json::to_string(&envelope)
            .map_err(|e| StoreError::Corruption(format!("record serialization failed: {e}")))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        let seq = self.next_seq;
        self.next_seq += 1;
        Ok(seq)
    }
}

/// Cut the stream back to `end_offset` (dropping torn tails or a partially
/// written epoch before resuming).
pub fn truncate_records(path: &Path, end_offset: u64) -> Result<(), StoreError> {
    let file =
        std::fs::OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    file.set_len(end_offset).map_err(io_err(path))?;
    Ok(())
}

/// Feedback a human reviewer entered for one epoch's batch; consumed in
/// place of model feedback. Amendments append; earlier records stay with
/// `superseded` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanFeedbackRecord {
    pub epoch: u32,
    pub seed: u64,
    pub reviewer: String,
    pub per_trajectory: Vec<String>,
    pub aggregate: String,
    /// Unix seconds; review happens interactively, outside the
    /// deterministic record stream.
    pub timestamp: u64,
    pub superseded: bool,
}

/// One run directory: config, per-seed record streams, review records,
/// reports, and the single-writer lock.
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn create(root: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(root.join("logs")).map_err(io_err(root))?;
        std::fs::create_dir_all(root.join("review")).map_err(io_err(root))?;
        std::fs::create_dir_all(root.join("reports")).map_err(io_err(root))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self, StoreError> {
        if !root.join("config.json").exists() {
            return Err(StoreError::NotFound(root.display().to_string()));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn initial_prompt_path(&self) -> PathBuf {
        self.root.join("prompt.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn log_path(&self, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("seed-{seed}.jsonl"))
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<(), StoreError> {
        let path = self.config_path();
        let text = serde_json::to_string_pretty(config)
            .map_err(|e| StoreError::Corruption(e.to_string()))?;
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read_config(&self) -> Result<RunConfig, StoreError> {
        let path = self.config_path();
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&raw)
            .map_err(|e| StoreError::Corruption(format!("config.json does not parse: {e}")))
    }

    pub fn write_initial_prompt(&self, prompt: &PromptVersion) -> Result<(), StoreError> {
        let path = self.initial_prompt_path();
        let doc = serde_json::json!({
            "schema_version": RECORD_SCHEMA_VERSION,
            "type": "prompt_version",
            "data": prompt,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap())
            .map_err(io_err(&path))
    }

    pub fn read_initial_prompt(&self) -> Result<PromptVersion, StoreError> {
        let path = self.initial_prompt_path();
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let doc: serde_json::Value = serde_json::from_str(&raw)
            .map_err(|e| StoreError::Corruption(format!("prompt.json does not parse: {e}")))?;
        serde_json::from_value(doc["data"].clone())
            .map_err(|e| StoreError::Corruption(format!("prompt.json data malformed: {e}")))
    }

    /// Take the single-writer lock for this run directory.
    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        let path = self.root.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(StoreError::Locked(format!(
                    "lock file {} held by pid {}",
                    path.display(),
                    holder.trim()
                )))
            }
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    fn review_path(&self, seed: u64, epoch: u32) -> PathBuf {
        self.root.join("review").join(format!("seed-{seed}-epoch-{epoch}.json"))
    }

    pub fn read_review_records(
        &self,
        seed: u64,
        epoch: u32,
    ) -> Result<Vec<HumanFeedbackRecord>, StoreError> {
        let path = self.review_path(seed, epoch);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&raw)
            .map_err(|e| StoreError::Corruption(format!("review record does not parse: {e}")))
    }

    /// The record the optimizer should consume, if any: the latest
    /// non-superseded one.
    pub fn active_review(
        &self,
        seed: u64,
        epoch: u32,
    ) -> Result<Option<HumanFeedbackRecord>, StoreError> {
        let records = self.read_review_records(seed, epoch)?;
        Ok(records.into_iter().rev().find(|r| !r.superseded))
    }

    /// Store a new review record. Fails if one already exists unless
    /// `amend`, in which case earlier records are kept and marked
    /// superseded.
    pub fn write_review(
        &self,
        record: HumanFeedbackRecord,
        amend: bool,
    ) -> Result<(), StoreError> {
        let path = self.review_path(record.seed, record.epoch);
        let mut records = self.read_review_records(record.seed, record.epoch)?;
        if !records.is_empty() && !amend {
            return Err(StoreError::State(format!(
                "epoch {} of seed {} already has human feedback; use amend to supersede",
                record.epoch, record.seed
            )));
        }
        for existing in &mut records {
            existing.superseded = true;
        }
        records.push(record);
        std::fs::write(&path, serde_json::to_string_pretty(&records).unwrap())
            .map_err(io_err(&path))
    }

    /// Reconstruct a seed's run record from its stream. Also returns every
    /// prompt version mentioned, keyed by id (resume needs their texts).
    pub fn load_run(&self, seed: u64) -> Result<LoadedRun, StoreError> {
        let path = self.log_path(seed);
        if !path.exists() {
            return Err(StoreError::NotFound(format!("seed {seed} log at {}", path.display())));
        }
        let outcome = read_records(&path)?;
        reconstruct_run(outcome, seed)
    }
}

/// Committed prefix of the stream as of one epoch's curve point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochBoundary {
    pub epoch: u32,
    /// Byte offset just past the epoch's curve point.
    pub offset: u64,
    /// Sequence number the next record after the boundary would get.
    pub next_seq: u64,
}

/// A reconstructed run plus the side tables resume needs.
#[derive(Debug)]
pub struct LoadedRun {
    pub record: RunRecord,
    /// Every prompt version recorded, in stream order; the same id can
    /// recur at different epochs when an incumbent is carried forward.
    pub prompts: Vec<PromptVersion>,
    pub feedbacks: Vec<EpochFeedback>,
    /// One boundary per committed epoch (epoch 0 is the baseline
    /// evaluation block).
    pub boundaries: Vec<EpochBoundary>,
    /// Byte offset just past the last complete epoch boundary (after its
    /// curve point); resuming truncates here.
    pub resume_offset: u64,
    /// Records that survive up to `resume_offset`.
    pub resume_seq: u64,
    pub truncated_tail: Option<String>,
}

fn reconstruct_run(outcome: ReadOutcome, seed: u64) -> Result<LoadedRun, StoreError> {
    let ReadOutcome { records, end_offset, truncated_tail } = outcome;
    if records.is_empty() {
        return Err(StoreError::Corruption("record stream is empty".into()));
    }
    let (config, config_digest, run_id) = match &records[0].body {
        RecordBody::Config { config, seed: s, config_digest } => {
            if *s != seed {
                return Err(StoreError::Corruption(format!(
                    "stream is for seed {s}, expected {seed}"
                )));
            }
            (config.clone(), config_digest.clone(), records[0].run_id.clone())
        }
        _ => {
            return Err(StoreError::Corruption(
                "first record must be the config snapshot".into(),
            ))
        }
    };

    let mut prompts = Vec::new();
    let mut feedbacks = Vec::new();
    let mut epoch_records = Vec::new();
    let mut training_curve = Vec::new();
    let mut complete = false;

    // Offsets of epoch boundaries: re-serialize record lines to track byte
    // positions exactly as written (one line per record plus newline).
    let mut offset = 0u64;
    let mut resume_offset = 0u64;
    let mut resume_seq = 0u64;
    let mut boundaries = Vec::new();
    for record in &records {
        let line_len = serde_json::to_string(record)
            .map_err(|e| StoreError::Corruption(e.to_string()))?
            .len() as u64
            + 1;
        offset += line_len;
        match &record.body {
            RecordBody::Prompt { prompt } => prompts.push(prompt.clone()),
            RecordBody::Feedback { feedback } => feedbacks.push(feedback.clone()),
            RecordBody::EpochSummary { record } => epoch_records.push(record.clone()),
            RecordBody::CurvePoint { epoch, score } => {
                training_curve.push((*epoch, *score));
                resume_offset = offset;
                resume_seq = record.seq + 1;
                boundaries.push(EpochBoundary {
                    epoch: *epoch,
                    offset,
                    next_seq: record.seq + 1,
                });
            }
            RecordBody::RunComplete => {
                complete = true;
                resume_offset = offset;
                resume_seq = record.seq + 1;
            }
            _ => {}
        }
    }
    let _ = end_offset;

    Ok(LoadedRun {
        record: RunRecord {
            run_id,
            config,
            config_digest,
            seed,
            epoch_records,
            training_curve,
            complete,
        },
        prompts,
        feedbacks,
        boundaries,
        resume_offset,
        resume_seq,
        truncated_tail,
    })
}

/// Held for the lifetime of a writing session; removing the lock file on
/// drop.
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
