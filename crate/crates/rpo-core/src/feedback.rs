//! Textual feedback over trajectory batches.
//!
//! Two model-driven styles: whole-trajectory (`mc`) feedback produced after
//! an episode completes, and turn-level (`td`) feedback where the call for
//! turn j sees turns and earlier feedbacks interleaved in order
//! t1, f1, t2, f2, ..., tj and the per-turn results are summarised
//! afterwards. Two baseline styles: `numeric` (a template over the batch
//! mean, no model call) and `binary_label` (transcript plus SUCCESS/FAILURE
//! label). A signal selector controls whether the feedbacker additionally
//! sees the user goal and the system's API calls.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CallRecord, GatewayError, LmClient};
use crate::model::{ChatMessage, Score, Trajectory, Turn};
use crate::par;
use crate::prompts::MetaPrompts;

pub const TAG_FEEDBACKER: &str = "feedbacker";
pub const TAG_FEEDBACKER_SUMMARY: &str = "feedbacker-summary";
pub const TAG_FEEDBACKER_AGGREGATE: &str = "feedbacker-aggregate";

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unparsable turn feedback ({message}); raw text: {raw_text:?}")]
    Parse { message: String, raw_text: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Which auxiliary signals the feedbacker sees alongside the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSet {
    pub include_goal: bool,
    pub include_api: bool,
}

impl SignalSet {
    /// Dialogue as pure text.
    pub const BASIC: SignalSet = SignalSet { include_goal: false, include_api: false };
    /// Adds the user goal.
    pub const SUBJECTIVE: SignalSet = SignalSet { include_goal: true, include_api: false };
    /// Adds the API calls.
    pub const BELIEVE: SignalSet = SignalSet { include_goal: false, include_api: true };
    /// Goal and API calls both.
    pub const FULL: SignalSet = SignalSet { include_goal: true, include_api: true };

    pub fn from_preset(name: &str) -> Option<SignalSet> {
        match name {
            "basic" => Some(Self::BASIC),
            "subjective" => Some(Self::SUBJECTIVE),
            "believe" => Some(Self::BELIEVE),
            "full" => Some(Self::FULL),
            _ => None,
        }
    }

    pub fn preset_name(&self) -> &'static str {
        match (self.include_goal, self.include_api) {
            (false, false) => "basic",
            (true, false) => "subjective",
            (false, true) => "believe",
            (true, true) => "full",
        }
    }
}

impl Default for SignalSet {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    /// Short-term reward value used by the TD-error diagnostic.
    pub fn reward(&self) -> f64 {
        match self {
            Sentiment::Negative => -1.0,
            Sentiment::Neutral => 0.0,
            Sentiment::Positive => 1.0,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

/// Structured turn-level feedback: the user's predicted reaction, a forecast
/// of eventual success, and one actionable suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnFeedback {
    pub turn_index: u32,
    pub predicted_next_sentiment: Sentiment,
    pub success_forecast: f64,
    pub suggestion: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStyle {
    Mc,
    Td,
    Numeric,
    BinaryLabel,
    /// Feedback entered by a human reviewer in place of a model call.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFeedback {
    pub trajectory_id: String,
    pub style: FeedbackStyle,
    pub turn_feedbacks: Vec<TurnFeedback>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochFeedback {
    pub epoch: u32,
    pub style: FeedbackStyle,
    pub trajectory_feedbacks: Vec<TrajectoryFeedback>,
    pub aggregate_text: String,
    pub batch_trajectory_ids: Vec<String>,
}

fn turn_lines(turn: &Turn, signals: &SignalSet) -> Vec<String> {
    let mut lines = vec![format!("User: {}", turn.user_utterance)];
    if signals.include_api {
        if let Some(call) = &turn.api_call {
            lines.push(format!("API: {}", call.render()));
        }
        if let Some(result) = &turn.api_result {
            lines.push(format!("Result: {result}"));
        }
    }
    lines.push(format!("System: {}", turn.system_response));
    lines
}

/// Deterministic transcript rendering: alternating User/System lines, the
/// goal prepended iff `include_goal`, API call/result lines inlined iff
/// `include_api`. The basic rendering is always a subsequence of the full
/// one for the same trajectory.
pub fn render_signals(trajectory: &Trajectory, signals: &SignalSet) -> String {
    let mut lines = Vec::new();
    if signals.include_goal {
        if let Some(goal) = &trajectory.goal_text {
            lines.push(format!("Goal: {goal}"));
        }
    }
    for turn in &trajectory.turns {
        lines.extend(turn_lines(turn, signals));
    }
    lines.join("\n")
}

/// Canonical three-field wire format for turn feedback. This is the inverse
/// of [`parse_turn_feedback`] on the structured fields.
pub fn format_turn_feedback(feedback: &TurnFeedback) -> String {
    format!(
        "sentiment: {}\nsuccess: {}\nsuggestion: {}",
        feedback.predicted_next_sentiment.label(),
        feedback.success_forecast,
        feedback.suggestion
    )
}

const SENTIMENT_WORDS: [(&str, Sentiment); 13] = [
    ("positive", Sentiment::Positive),
    ("satisfied", Sentiment::Positive),
    ("happy", Sentiment::Positive),
    ("pleased", Sentiment::Positive),
    ("negative", Sentiment::Negative),
    ("frustrated", Sentiment::Negative),
    ("angry", Sentiment::Negative),
    ("annoyed", Sentiment::Negative),
    ("dissatisfied", Sentiment::Negative),
    ("unhappy", Sentiment::Negative),
    ("neutral", Sentiment::Neutral),
    ("mixed", Sentiment::Neutral),
    ("okay", Sentiment::Neutral),
];

fn word_at_boundary(haystack: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before_ok = start == 0
            || !haystack[..start].chars().next_back().unwrap().is_ascii_alphanumeric();
        let after_ok = end == haystack.len()
            || !haystack[end..].chars().next().unwrap().is_ascii_alphanumeric();
        if before_ok && after_ok {
            return Some(start);
        }
        from = end;
    }
    None
}

fn parse_sentiment(value: &str) -> Option<Sentiment> {
    let lower = value.to_ascii_lowercase();
    SENTIMENT_WORDS
        .iter()
        .filter_map(|(word, sentiment)| word_at_boundary(&lower, word).map(|pos| (pos, *sentiment)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, sentiment)| sentiment)
}

fn parse_success(value: &str) -> Option<f64> {
    let lower = value.to_ascii_lowercase();
    for word in ["failure", "fail", "unsuccessful", "unlikely"] {
        if word_at_boundary(&lower, word).is_some() {
            return Some(0.0);
        }
    }
    for word in ["success", "successful", "succeed", "likely"] {
        if word_at_boundary(&lower, word).is_some() {
            return Some(1.0);
        }
    }
    let number = regex::Regex::new(r"(\d+(?:\.\d+)?|\.\d+)\s*(%?)").unwrap();
    let caps = number.captures(&lower)?;
    let mut parsed: f64 = caps[1].parse().ok()?;
    if &caps[2] == "%" {
        parsed /= 100.0;
    }
    Some(parsed.clamp(0.0, 1.0))
}

/// Tolerant parse of the labeled three-field block: labels `sentiment`,
/// `success`, `suggestion` in any order, `:` or `=` separators, case
/// insensitive. Sentiment accepts common synonyms; success accepts a
/// probability, a percentage, or the words success/failure. Each field
/// value runs to the next label or the end of its line.
pub fn parse_turn_feedback(raw: &str) -> Result<(Sentiment, f64, String), FeedbackError> {
    let label_re = regex::Regex::new(r"(?i)\b(sentiment|success|suggestion)\s*[:=]\s*").unwrap();
    let matches: Vec<(usize, usize, String)> = label_re
        .captures_iter(raw)
        .map(|c| {
            let m = c.get(0).unwrap();
            (m.start(), m.end(), c[1].to_ascii_lowercase())
        })
        .collect();

    let mut sentiment = None;
    let mut success = None;
    let mut suggestion: Option<String> = None;
    for (i, (start, end, label)) in matches.iter().enumerate() {
        let value_end = {
            let next_label = matches.get(i + 1).map(|(s, _, _)| *s).unwrap_or(raw.len());
            let line_end = raw[*start..].find('\n').map(|p| start + p).unwrap_or(raw.len());
            next_label.min(line_end)
        };
        let value = raw[*end..value_end.max(*end)].trim().trim_end_matches([';', ',']).trim();
        match label.as_str() {
            "sentiment" if sentiment.is_none() => sentiment = parse_sentiment(value),
            "success" if success.is_none() => success = parse_success(value),
            "suggestion" if suggestion.is_none() && !value.is_empty() => {
                suggestion = Some(value.to_string())
            }
            _ => {}
        }
    }

    let mut missing = Vec::new();
    if sentiment.is_none() {
        missing.push("sentiment");
    }
    if success.is_none() {
        missing.push("success");
    }
    if suggestion.is_none() {
        missing.push("suggestion");
    }
    if missing.is_empty() {
        Ok((sentiment.unwrap(), success.unwrap(), suggestion.unwrap()))
    } else {
        Err(FeedbackError::Parse {
            message: format!("missing field(s): {}", missing.join(", ")),
            raw_text: raw.to_string(),
        })
    }
}

fn check_batch(batch: &[Trajectory]) -> Result<(), FeedbackError> {
    if batch.is_empty() {
        return Err(FeedbackError::InvalidArgument("batch must be non-empty".into()));
    }
    for trajectory in batch {
        if !trajectory.turns.iter().any(|t| t.terminal) {
            return Err(FeedbackError::InvalidArgument(format!(
                "trajectory {} is incomplete",
                trajectory.id
            )));
        }
    }
    Ok(())
}

fn aggregate_over(
    summaries: &[(String, String)],
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<String, FeedbackError> {
    let items: Vec<String> = summaries
        .iter()
        .enumerate()
        .map(|(i, (_, text))| format!("{}. {}", i + 1, text))
        .collect();
    let input = prompts.aggregate_feedback.render(&[("items", &items.join("\n"))]);
    let response = client.call(
        TAG_FEEDBACKER_AGGREGATE,
        vec![ChatMessage::user(input)],
        records,
    )?;
    Ok(response.text)
}

fn batch_feedback_with<FB>(
    epoch: u32,
    batch: &[Trajectory],
    style: FeedbackStyle,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
    per_trajectory: FB,
) -> Result<EpochFeedback, FeedbackError>
where
    FB: Fn(&Trajectory, &mut Vec<CallRecord>) -> Result<TrajectoryFeedback, FeedbackError>
        + Sync
        + Send,
{
    check_batch(batch)?;
    // Per-trajectory calls are independent; run them data-parallel and merge
    // their call records back in batch order so logs stay deterministic.
    let results: Vec<Result<(TrajectoryFeedback, Vec<CallRecord>), FeedbackError>> =
        par::map_indexed(batch.len(), |i| {
            let mut local = Vec::new();
            per_trajectory(&batch[i], &mut local).map(|fb| (fb, local))
        });
    let mut trajectory_feedbacks = Vec::with_capacity(batch.len());
    for result in results {
        let (fb, local) = result?;
        records.extend(local);
        trajectory_feedbacks.push(fb);
    }
    let summaries: Vec<(String, String)> = trajectory_feedbacks
        .iter()
        .map(|fb| (fb.trajectory_id.clone(), fb.summary.clone()))
        .collect();
    let aggregate_text = aggregate_over(&summaries, prompts, client, records)?;
    Ok(EpochFeedback {
        epoch,
        style,
        trajectory_feedbacks,
        aggregate_text,
        batch_trajectory_ids: batch.iter().map(|t| t.id.clone()).collect(),
    })
}

/// Whole-trajectory feedback: one feedbacker call per completed trajectory
/// over the full rendered transcript, then one aggregation call.
pub fn mc_feedback(
    epoch: u32,
    batch: &[Trajectory],
    signals: &SignalSet,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<EpochFeedback, FeedbackError> {
    batch_feedback_with(
        epoch,
        batch,
        FeedbackStyle::Mc,
        prompts,
        client,
        records,
        |trajectory, local| {
            let transcript = render_signals(trajectory, signals);
            let input = prompts.mc_feedbacker.render(&[("transcript", &transcript)]);
            let response = client.call(TAG_FEEDBACKER, vec![ChatMessage::user(input)], local)?;
            Ok(TrajectoryFeedback {
                trajectory_id: trajectory.id.clone(),
                style: FeedbackStyle::Mc,
                turn_feedbacks: Vec::new(),
                summary: response.text,
            })
        },
    )
}

fn render_turn_block(
    turn: &Turn,
    goal: Option<&str>,
    signals: &SignalSet,
) -> String {
    let mut lines = vec![format!("Turn {}:", turn.index)];
    if turn.index == 1 && signals.include_goal {
        if let Some(goal) = goal {
            lines.push(format!("Goal: {goal}"));
        }
    }
    lines.extend(turn_lines(turn, signals));
    lines.join("\n")
}

fn render_feedback_block(feedback: &TurnFeedback) -> String {
    format!("Feedback {}:\n{}", feedback.turn_index, format_turn_feedback(feedback))
}

/// Turn-level feedback for the last turn of `prefix_turns`. The model input
/// interleaves turns with the feedback already given: t1, f1, ..., t_j.
/// An unparsable reply gets one repair re-ask with an explicit format
/// reminder before failing.
pub fn td_turn_feedback(
    goal: Option<&str>,
    prefix_turns: &[Turn],
    prior_feedbacks: &[TurnFeedback],
    signals: &SignalSet,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<TurnFeedback, FeedbackError> {
    if prefix_turns.is_empty() {
        return Err(FeedbackError::InvalidArgument("prefix_turns must be non-empty".into()));
    }
    if prior_feedbacks.len() != prefix_turns.len() - 1 {
        return Err(FeedbackError::InvalidArgument(format!(
            "expected {} prior feedbacks, got {}",
            prefix_turns.len() - 1,
            prior_feedbacks.len()
        )));
    }
    let mut blocks = Vec::with_capacity(prefix_turns.len() * 2 - 1);
    for (i, turn) in prefix_turns.iter().enumerate() {
        blocks.push(render_turn_block(turn, goal, signals));
        if let Some(feedback) = prior_feedbacks.get(i) {
            blocks.push(render_feedback_block(feedback));
        }
    }
    let input = prompts.td_feedbacker.render(&[("dialogue", &blocks.join("\n\n"))]);
    let current = prefix_turns.last().unwrap();

    let mut messages = vec![ChatMessage::user(input)];
    let first = client.call(TAG_FEEDBACKER, messages.clone(), records)?;
    let parsed = match parse_turn_feedback(&first.text) {
        Ok(fields) => Ok((fields, first.text)),
        Err(_) => {
            messages.push(ChatMessage::assistant(first.text));
            messages.push(ChatMessage::user(
                "Your reply must contain exactly the three labeled fields: \
                 sentiment: <negative|neutral|positive>, success: <0..1>, \
                 suggestion: <text>. Please answer again in that format.",
            ));
            let second = client.call(TAG_FEEDBACKER, messages, records)?;
            parse_turn_feedback(&second.text).map(|fields| (fields, second.text))
        }
    };
    let ((sentiment, forecast, suggestion), raw_text) = parsed?;
    Ok(TurnFeedback {
        turn_index: current.index,
        predicted_next_sentiment: sentiment,
        success_forecast: forecast,
        suggestion,
        raw_text,
    })
}

/// Summarise one trajectory's turn feedbacks into a single text with one
/// model call listing them all in index order.
pub fn td_trajectory_summary(
    turn_feedbacks: &[TurnFeedback],
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<String, FeedbackError> {
    if turn_feedbacks.is_empty() {
        return Err(FeedbackError::InvalidArgument("turn_feedbacks must be non-empty".into()));
    }
    let blocks: Vec<String> = turn_feedbacks.iter().map(render_feedback_block).collect();
    let input = prompts.td_summary.render(&[("turn_feedbacks", &blocks.join("\n\n"))]);
    let response =
        client.call(TAG_FEEDBACKER_SUMMARY, vec![ChatMessage::user(input)], records)?;
    Ok(response.text)
}

/// Turn-level feedback over one whole trajectory: the within-trajectory
/// calls are strictly sequential (each consumes the prior feedbacks) and
/// end with one summary call.
pub fn td_trajectory_feedback(
    trajectory: &Trajectory,
    signals: &SignalSet,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<TrajectoryFeedback, FeedbackError> {
    let goal = trajectory.goal_text.as_deref();
    let mut turn_feedbacks: Vec<TurnFeedback> = Vec::with_capacity(trajectory.turns.len());
    for j in 1..=trajectory.turns.len() {
        let feedback = td_turn_feedback(
            goal,
            &trajectory.turns[..j],
            &turn_feedbacks,
            signals,
            prompts,
            client,
            records,
        )?;
        turn_feedbacks.push(feedback);
    }
    let summary = td_trajectory_summary(&turn_feedbacks, prompts, client, records)?;
    Ok(TrajectoryFeedback {
        trajectory_id: trajectory.id.clone(),
        style: FeedbackStyle::Td,
        turn_feedbacks,
        summary,
    })
}

/// Turn-level feedback over a batch, aggregated like [`mc_feedback`].
pub fn td_feedback(
    epoch: u32,
    batch: &[Trajectory],
    signals: &SignalSet,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<EpochFeedback, FeedbackError> {
    batch_feedback_with(
        epoch,
        batch,
        FeedbackStyle::Td,
        prompts,
        client,
        records,
        |trajectory, local| td_trajectory_feedback(trajectory, signals, prompts, client, local),
    )
}

/// Numeric baseline: a fixed template over the batch mean score; never
/// calls a model.
pub fn numeric_feedback(
    epoch: u32,
    batch: &[Trajectory],
    scores: &[Score],
) -> Result<EpochFeedback, FeedbackError> {
    check_batch(batch)?;
    if scores.len() != batch.len() {
        return Err(FeedbackError::InvalidArgument(format!(
            "got {} scores for {} trajectories",
            scores.len(),
            batch.len()
        )));
    }
    let kind = scores[0].kind;
    if scores.iter().any(|s| s.kind != kind) {
        return Err(FeedbackError::InvalidArgument("scores mix metric kinds".into()));
    }
    let mean = scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64;
    let aggregate_text = format!(
        "The system completed {} interactions. Batch {}: {:.2}. \
         Improve the instruction prompt to raise this metric.",
        batch.len(),
        kind.metric_name(),
        mean
    );
    Ok(EpochFeedback {
        epoch,
        style: FeedbackStyle::Numeric,
        trajectory_feedbacks: Vec::new(),
        aggregate_text,
        batch_trajectory_ids: batch.iter().map(|t| t.id.clone()).collect(),
    })
}

/// Binary-label baseline: each transcript is shown with its SUCCESS/FAILURE
/// outcome line and the feedbacker proposes edits.
pub fn binary_label_feedback(
    epoch: u32,
    batch: &[Trajectory],
    scores: &[Score],
    signals: &SignalSet,
    prompts: &MetaPrompts,
    client: &LmClient,
    records: &mut Vec<CallRecord>,
) -> Result<EpochFeedback, FeedbackError> {
    check_batch(batch)?;
    if scores.len() != batch.len() {
        return Err(FeedbackError::InvalidArgument(format!(
            "got {} scores for {} trajectories",
            scores.len(),
            batch.len()
        )));
    }
    for score in scores {
        if score.value != 0.0 && score.value != 1.0 {
            return Err(FeedbackError::InvalidArgument(format!(
                "binary label feedback needs success/failure scores, got {}",
                score.value
            )));
        }
    }
    let labels: Vec<&str> = scores
        .iter()
        .map(|s| if s.value == 1.0 { "SUCCESS" } else { "FAILURE" })
        .collect();
    batch_feedback_with(
        epoch,
        batch,
        FeedbackStyle::BinaryLabel,
        prompts,
        client,
        records,
        |trajectory, local| {
            let position = batch
                .iter()
                .position(|t| t.id == trajectory.id)
                .expect("trajectory from batch");
            let transcript = format!(
                "{}\nOutcome: {}",
                render_signals(trajectory, signals),
                labels[position]
            );
            let input = prompts.mc_feedbacker.render(&[("transcript", &transcript)]);
            let response = client.call(TAG_FEEDBACKER, vec![ChatMessage::user(input)], local)?;
            Ok(TrajectoryFeedback {
                trajectory_id: trajectory.id.clone(),
                style: FeedbackStyle::BinaryLabel,
                turn_feedbacks: Vec::new(),
                summary: response.text,
            })
        },
    )
}

/// Feedback entered by a human reviewer; consumed by the optimizer in place
/// of model feedback for that epoch, with zero feedbacker calls.
pub fn human_feedback(
    epoch: u32,
    batch_trajectory_ids: Vec<String>,
    per_trajectory_texts: &[String],
    aggregate_text: String,
) -> EpochFeedback {
    let trajectory_feedbacks = batch_trajectory_ids
        .iter()
        .zip(per_trajectory_texts)
        .map(|(id, text)| TrajectoryFeedback {
            trajectory_id: id.clone(),
            style: FeedbackStyle::Human,
            turn_feedbacks: Vec::new(),
            summary: text.clone(),
        })
        .collect();
    EpochFeedback {
        epoch,
        style: FeedbackStyle::Human,
        trajectory_feedbacks,
        aggregate_text,
        batch_trajectory_ids,
    }
}

/// Numeric reading of the turn-level feedback stream: with sentiment as the
/// short-term reward r in {-1, 0, +1} and the success forecast as the value
/// estimate V, the per-turn error is r_j + gamma * V_{j+1} - V_j, and
/// r_n - V_n at the final turn. Diagnostic only; it never feeds the
/// rewriter.
pub fn td_error_diagnostic(turn_feedbacks: &[TurnFeedback], gamma: f64) -> Vec<f64> {
    let n = turn_feedbacks.len();
    (0..n)
        .map(|j| {
            let reward = turn_feedbacks[j].predicted_next_sentiment.reward();
            let value = turn_feedbacks[j].success_forecast;
            match turn_feedbacks.get(j + 1) {
                Some(next) => reward + gamma * next.success_forecast - value,
                None => reward - value,
            }
        })
        .collect()
}
