//! Candidate prompt generation: basic rewriting from the current
//! (prompt, feedback) pair, and replay rewriting over the full ordered
//! history of past pairs, rendered newest first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::EpochFeedback;
use crate::gateway::{CallRecord, GatewayError, LmClient};
use crate::model::{ChatMessage, PromptVersion, Score};
use crate::par;
use crate::prompts::MetaPrompts;

pub const TAG_REWRITER: &str = "rewriter";

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no prompt block in rewriter response after repair retry; raw text: {raw_text:?}")]
    Parse { raw_text: String },
    #[error("every candidate rewrite failed this epoch")]
    Epoch,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One past (prompt, feedback) pair per epoch, in epoch order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub epoch: u32,
    pub prompt_id: String,
    pub prompt_text: String,
    pub feedback_text: String,
}

/// Append-only history of (prompt, feedback) pairs, one per epoch,
/// contiguous from epoch 1. Owned by the optimizer; the rewriter works on
/// an immutable snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: ReplayEntry) -> Result<(), RewriteError> {
        let expected = self.entries.len() as u32 + 1;
        if entry.epoch != expected {
            return Err(RewriteError::InvalidArgument(format!(
                "replay entries must be contiguous: expected epoch {expected}, got {}",
                entry.epoch
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&ReplayEntry> {
        self.entries.last()
    }
}

/// A rewritten prompt awaiting (or carrying) its validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrompt {
    pub text: String,
    pub candidate_index: u32,
    pub parent_prompt_id: String,
    pub validation_score: Option<Score>,
}

/// The block format shared by the basic rewriter input and each history
/// entry, so the replay input always contains the current pair verbatim.
pub fn render_pair(prompt_text: &str, feedback_text: &str) -> String {
    format!("--- prompt ---\n{prompt_text}\n--- feedback ---\n{feedback_text}")
}

/// Render the history newest-first: the epoch-i pair comes first, epoch 1
/// last. When the buffer exceeds `budget_entries`, only the most recent
/// `budget_entries` epochs are kept; pairs are never half-included.
pub fn render_history(buffer: &ReplayBuffer, budget_entries: usize) -> Result<String, RewriteError> {
    if buffer.is_empty() {
        return Err(RewriteError::InvalidArgument("replay buffer is empty".into()));
    }
    if budget_entries == 0 {
        return Err(RewriteError::InvalidArgument("budget_entries must be >= 1".into()));
    }
    let entries = buffer.entries();
    let start = entries.len().saturating_sub(budget_entries);
    let blocks: Vec<String> = entries[start..]
        .iter()
        .rev()
        .map(|entry| render_pair(&entry.prompt_text, &entry.feedback_text))
        .collect();
    Ok(blocks.join("\n\n"))
}

/// Extract the rewritten prompt: the content of the last fenced code block
/// in the response, any label.
pub fn extract_prompt_block(text: &str) -> Option<String> {
    let mut best = None;
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after_open = &rest[open + 3..];
        let Some(close) = after_open.find("```") else {
            break;
        };
        let block = &after_open[..close];
        rest = &after_open[close + 3..];
        let body = match block.split_once('\n') {
            Some((_, tail)) => tail,
            None => block,
        };
        let trimmed = body.trim();
        if !trimmed.is_empty() {
            best = Some(trimmed.to_string());
        }
    }
    best
}

fn rewrite_call(
    input: String,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<String, RewriteError> {
    let mut messages = vec![ChatMessage::user(input)];
    let first = client.call(TAG_REWRITER, messages.clone(), records)?;
    if let Some(text) = extract_prompt_block(&first.text) {
        return Ok(text);
    }
    messages.push(ChatMessage::assistant(first.text));
    messages.push(ChatMessage::user(
        "Your reply must contain the complete new instruction prompt inside a \
         fenced code block (``` ... ```). Please answer again in that format.",
    ));
    let second = client.call(TAG_REWRITER, messages, records)?;
    extract_prompt_block(&second.text).ok_or(RewriteError::Parse { raw_text: second.text })
}

/// One rewrite from the current prompt and this epoch's feedback.
pub fn rewrite_basic(
    prompt: &PromptVersion,
    feedback: &EpochFeedback,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<String, RewriteError> {
    if feedback.epoch != prompt.epoch {
        return Err(RewriteError::InvalidArgument(format!(
            "feedback epoch {} does not match prompt epoch {}",
            feedback.epoch, prompt.epoch
        )));
    }
    let input = prompts.basic_rewriter.render(&[
        ("current_prompt", prompt.text.as_str()),
        ("feedback", feedback.aggregate_text.as_str()),
    ]);
    rewrite_call(input, client, records)
}

/// One rewrite from the full (prompt, feedback) history, newest first.
pub fn rewrite_replay(
    buffer: &ReplayBuffer,
    budget_entries: usize,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<String, RewriteError> {
    let history = render_history(buffer, budget_entries)?;
    let input = prompts.replay_rewriter.render(&[("history", history.as_str())]);
    rewrite_call(input, client, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    Basic,
    Replay,
}

/// Inputs the candidate generator draws from; the buffer's last entry is
/// the current epoch's (incumbent, feedback) pair.
pub struct RewriteInputs<'a> {
    pub incumbent: &'a PromptVersion,
    pub feedback: &'a EpochFeedback,
    pub buffer: &'a ReplayBuffer,
    pub history_budget: usize,
}

/// Outcome of one epoch's candidate generation: the candidates that
/// survived extraction plus a warning line per failed call.
#[derive(Debug)]
pub struct GeneratedCandidates {
    pub candidates: Vec<CandidatePrompt>,
    pub warnings: Vec<String>,
}

/// Generate k candidates with independent sampled calls. Partial extraction
/// failures degrade to fewer candidates (minimum one) with a warning per
/// failure; only a full wipeout is an epoch error.
pub fn generate_candidates(
    mode: RewriteMode,
    inputs: &RewriteInputs<'_>,
    prompts: &MetaPrompts,
    client: &LmClient,
    k: u32,
    records: &mut Vec<CallRecord>,
) -> Result<GeneratedCandidates, RewriteError> {
    if k < 1 {
        return Err(RewriteError::InvalidArgument("k must be >= 1".into()));
    }
    if mode == RewriteMode::Replay {
        match inputs.buffer.last() {
            None => return Err(RewriteError::InvalidArgument("replay buffer is empty".into())),
            Some(last) if last.epoch != inputs.feedback.epoch => {
                return Err(RewriteError::InvalidArgument(format!(
                    "replay buffer last epoch {} does not match current epoch {}",
                    last.epoch, inputs.feedback.epoch
                )))
            }
            Some(_) => {}
        }
    }
    let results: Vec<(Result<String, RewriteError>, Vec<CallRecord>)> =
        par::map_indexed(k as usize, |_| {
            let mut local = Vec::new();
            let text = match mode {
                RewriteMode::Basic => {
                    rewrite_basic(inputs.incumbent, inputs.feedback, prompts, client, &mut local)
                }
                RewriteMode::Replay => rewrite_replay(
                    inputs.buffer,
                    inputs.history_budget,
                    prompts,
                    client,
                    &mut local,
                ),
            };
            (text, local)
        });

    let mut candidates = Vec::new();
    let mut warnings = Vec::new();
    for (i, (result, local)) in results.into_iter().enumerate() {
        records.extend(local);
        match result {
            Ok(text) => candidates.push(CandidatePrompt {
                text,
                candidate_index: i as u32,
                parent_prompt_id: inputs.incumbent.id.clone(),
                validation_score: None,
            }),
            Err(RewriteError::Parse { .. }) => {
                warnings.push(format!("candidate {i}: rewrite produced no prompt block"));
            }
            Err(other) => return Err(other),
        }
    }
    if candidates.is_empty() {
        return Err(RewriteError::Epoch);
    }
    Ok(GeneratedCandidates { candidates, warnings })
}
