//! Terminal flow for human feedback: present each collected transcript in
//! sequence, collect one non-empty feedback text per trajectory plus a
//! final aggregate, and store the result for the optimizer to consume in
//! place of model feedback.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::feedback::{render_signals, SignalSet};
use crate::model::Trajectory;
use crate::store::HumanFeedbackRecord;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("io error during review: {0}")]
    Io(#[from] std::io::Error),
    #[error("review input ended before all feedback was collected")]
    InputExhausted,
}

fn read_non_empty(
    input: &mut impl BufRead,
    output: &mut impl Write,
    prompt: &str,
) -> Result<String, ReviewError> {
    loop {
        write!(output, "{prompt}")?;
        output.flush()?;
        let mut line = String::new();
        let read = input.read_line(&mut line)?;
        if read == 0 {
            return Err(ReviewError::InputExhausted);
        }
        let text = line.trim();
        if !text.is_empty() {
            return Ok(text.to_string());
        }
        writeln!(output, "Feedback must be non-empty.")?;
    }
}

/// Walk the reviewer through every trajectory of one epoch's batch. Empty
/// entries are re-prompted; the aggregate comes last. The timestamp is
/// taken at completion.
pub fn collect_human_feedback(
    epoch: u32,
    seed: u64,
    reviewer: &str,
    batch: &[Trajectory],
    signals: &SignalSet,
    input: &mut impl BufRead,
    output: &mut impl Write,
) -> Result<HumanFeedbackRecord, ReviewError> {
    let mut per_trajectory = Vec::with_capacity(batch.len());
    for (i, trajectory) in batch.iter().enumerate() {
        writeln!(output, "\n=== Trajectory {}/{} ({}) ===", i + 1, batch.len(), trajectory.id)?;
        writeln!(output, "{}", render_signals(trajectory, signals))?;
        if let Some(outcome) = &trajectory.outcome {
            writeln!(output, "[outcome: {:.2}]", outcome.value)?;
        }
        per_trajectory.push(read_non_empty(input, output, "feedback> ")?);
    }
    writeln!(output, "\n=== Batch aggregate ===")?;
    let aggregate = read_non_empty(input, output, "aggregate feedback> ")?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(HumanFeedbackRecord {
        epoch,
        seed,
        reviewer: reviewer.to_string(),
        per_trajectory,
        aggregate,
        timestamp,
        superseded: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Score, Turn};

    fn trajectory(id: &str) -> Trajectory {
        Trajectory {
            id: id.into(),
            prompt_id: "p".into(),
            environment_id: "keyword".into(),
            task_instance_id: "t".into(),
            goal_text: None,
            turns: vec![Turn {
                index: 1,
                user_utterance: "begin".into(),
                system_response: "ok".into(),
                api_call: None,
                api_result: None,
                terminal: true,
            }],
            outcome: Some(Score::success(true)),
            seed: 0,
        }
    }

    #[test]
    fn collects_one_text_per_trajectory_plus_aggregate() {
        let batch = vec![trajectory("a"), trajectory("b")];
        let mut input = std::io::Cursor::new("first note\nsecond note\noverall advice\n");
        let mut output = Vec::new();
        let record = collect_human_feedback(
            2,
            7,
            "expert-a",
            &batch,
            &SignalSet::FULL,
            &mut input,
            &mut output,
        )
        .unwrap();
        assert_eq!(record.per_trajectory, vec!["first note", "second note"]);
        assert_eq!(record.aggregate, "overall advice");
        assert_eq!(record.epoch, 2);
        assert_eq!(record.seed, 7);
        let shown = String::from_utf8(output).unwrap();
        assert!(shown.contains("Trajectory 1/2"));
        assert!(shown.contains("User: begin"));
    }

    #[test]
    fn empty_entries_are_reprompted() {
        let batch = vec![trajectory("a")];
        let mut input = std::io::Cursor::new("\n\nreal feedback\nsummary\n");
        let mut output = Vec::new();
        let record = collect_human_feedback(
            1,
            1,
            "expert-a",
            &batch,
            &SignalSet::BASIC,
            &mut input,
            &mut output,
        )
        .unwrap();
        assert_eq!(record.per_trajectory, vec!["real feedback"]);
        let shown = String::from_utf8(output).unwrap();
        assert!(shown.contains("Feedback must be non-empty."));
    }

    #[test]
    fn exhausted_input_is_an_error() {
        let batch = vec![trajectory("a")];
        let mut input = std::io::Cursor::new("only one\n");
        let mut output = Vec::new();
        let err = collect_human_feedback(
            1,
            1,
            "expert-a",
            &batch,
            &SignalSet::BASIC,
            &mut input,
            &mut output,
        )
        .unwrap_err();
        assert!(matches!(err, ReviewError::InputExhausted));
    }
}
