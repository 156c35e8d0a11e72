//! The epoch loop: collect a batch of trajectories with the incumbent
//! prompt, produce feedback, rewrite into k candidates, score each on the
//! validation split, select the best, append to the replay buffer, repeat.
//!
//! Every event is appended to the per-seed run log as it happens, so a run
//! can be interrupted at an epoch boundary and resumed to a byte-identical
//! log (under a scripted backend).

mod episode;

pub use episode::{derive_seed, run_episode, sample_schedule, EpisodeOutcome, TAG_SYSTEM_AGENT};

use std::sync::Arc;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::env::{EnvError, EnvProvider, TaskBundle};
use crate::feedback::{self, EpochFeedback, FeedbackError, FeedbackStyle};
use crate::gateway::{CallRecord, GatewayError, LmClient, RetryPolicy};
use crate::model::{ModelError, PromptVersion, Score, ScoreKind, Split, TaskInstance, Trajectory};
use crate::par;
use crate::prompts::{MetaPrompts, TemplateError};
use crate::rewriter::{
    generate_candidates, CandidatePrompt, ReplayBuffer, ReplayEntry, RewriteError, RewriteInputs,
};
use crate::store::{
    EpochRecord, EvaluationRecord, RecordBody, RecordWriter, RunRecord, RunStore, StoreError,
};

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("episode failed: {0}")]
    Episode(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl OptError {
    /// Failures worth one retry on a fresh task; backend failures are not
    /// (they abort the run with the partial record intact).
    fn episode_retryable(&self) -> bool {
        matches!(self, OptError::Env(_) | OptError::Episode(_))
    }
}

#[derive(Debug, Clone, Default)]
pub struct OptimizeOptions {
    /// Stop after this epoch completes (graceful interrupt); the run stays
    /// resumable.
    pub stop_after_epoch: Option<u32>,
    /// Discard this epoch and everything after it before running, e.g. to
    /// redo an epoch after human feedback was recorded for it. Collection
    /// is a pure function of (seed, epoch), so the redone epoch sees the
    /// same batch under a deterministic backend.
    pub redo_from_epoch: Option<u32>,
    /// Touch only this seed; other seeds are returned as currently
    /// persisted (or skipped when they have no log yet).
    pub only_seed: Option<u64>,
}

/// Collect one epoch's batch of complete trajectories. Tasks are sampled
/// without replacement per batch (reshuffling once a pass through the split
/// is exhausted); sampling is a pure function of (seed, epoch). A failed
/// episode is retried once on a fresh task before failing the epoch.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch(
    provider: &EnvProvider,
    train: &[&TaskInstance],
    prompt: &PromptVersion,
    batch_size: u32,
    run_seed: u64,
    epoch: u32,
    run_id: &str,
    system_client: &LmClient,
) -> Result<Vec<EpisodeOutcome>, OptError> {
    if train.is_empty() {
        return Err(OptError::InvalidArgument("train split is empty".into()));
    }
    let batch = batch_size as usize;
    let schedule = sample_schedule(train.len(), batch * 2, run_seed, epoch);
    let results: Vec<Result<EpisodeOutcome, OptError>> = par::map_indexed(batch, |slot| {
        let trajectory_id = format!("{run_id}-s{run_seed}-e{epoch}-t{slot:02}");
        let primary = train[schedule[slot]];
        let first = run_episode(
            provider,
            primary,
            prompt,
            derive_seed(&[run_seed, epoch as u64, slot as u64, 1]),
            trajectory_id.clone(),
            system_client,
        );
        match first {
            Ok(outcome) => Ok(outcome),
            Err(e) if e.episode_retryable() => {
                let backup = train[schedule[batch + slot]];
                run_episode(
                    provider,
                    backup,
                    prompt,
                    derive_seed(&[run_seed, epoch as u64, slot as u64, 2]),
                    trajectory_id,
                    system_client,
                )
            }
            Err(e) => Err(e),
        }
    });
    results.into_iter().collect()
}

/// One prompt's validation sweep: per-task judged scores and their mean.
pub struct Evaluation {
    pub mean: Score,
    pub per_task: Vec<(String, f64)>,
    pub records: Vec<CallRecord>,
}

/// Run one episode per validation task with `prompt` as the system prompt
/// and average the outcomes. Episode seeds are a pure function of the run
/// seed and task position, fixed across epochs so scores are comparable.
pub fn evaluate_prompt(
    provider: &EnvProvider,
    validation: &[&TaskInstance],
    prompt: &PromptVersion,
    run_seed: u64,
    run_id: &str,
    label: &str,
    system_client: &LmClient,
) -> Result<Evaluation, OptError> {
    if validation.is_empty() {
        return Err(OptError::InvalidArgument("validation split is empty".into()));
    }
    let results: Vec<Result<(Trajectory, Vec<CallRecord>), OptError>> =
        par::map_indexed(validation.len(), |i| {
            let task = validation[i];
            let trajectory_id = format!("{run_id}-s{run_seed}-{label}-v{i:03}");
            let seed = derive_seed(&[run_seed, 0xEF, i as u64, 1]);
            let outcome = match run_episode(
                provider,
                task,
                prompt,
                seed,
                trajectory_id.clone(),
                system_client,
            ) {
                Ok(outcome) => outcome,
                Err(e) if e.episode_retryable() => run_episode(
                    provider,
                    task,
                    prompt,
                    derive_seed(&[run_seed, 0xEF, i as u64, 2]),
                    trajectory_id,
                    system_client,
                )?,
                Err(e) => return Err(e),
            };
            Ok((outcome.trajectory, outcome.records))
        });

    let mut per_task = Vec::with_capacity(validation.len());
    let mut records = Vec::new();
    let mut kinds = Vec::new();
    for result in results {
        let (trajectory, calls) = result?;
        let score = trajectory.outcome.expect("judged episode");
        per_task.push((trajectory.task_instance_id.clone(), score.value));
        kinds.push(score.kind);
        records.extend(calls);
    }
    let mean_value = per_task.iter().map(|(_, v)| v).sum::<f64>() / per_task.len() as f64;
    let kind = if kinds.iter().all(|k| *k == ScoreKind::FunctionalAccuracy) {
        ScoreKind::FunctionalAccuracy
    } else {
        ScoreKind::Scalar
    };
    Ok(Evaluation { mean: Score { kind, value: mean_value }, per_task, records })
}

/// Argmax over validation scores; ties break to the lowest candidate index.
pub fn select_candidate(candidates: &[CandidatePrompt]) -> Result<usize, OptError> {
    if candidates.is_empty() {
        return Err(OptError::InvalidArgument("no candidates to select from".into()));
    }
    let mut best = 0usize;
    let mut best_score = match &candidates[0].validation_score {
        Some(score) => score.value,
        None => return Err(OptError::State("candidate 0 has no validation score".into())),
    };
    for (i, candidate) in candidates.iter().enumerate().skip(1) {
        let score = candidate
            .validation_score
            .as_ref()
            .ok_or_else(|| OptError::State(format!("candidate {i} has no validation score")))?;
        if score.value > best_score {
            best = i;
            best_score = score.value;
        }
    }
    Ok(best)
}

/// The incumbent carried unchanged into the next epoch (skipped epoch or
/// keep-incumbent): same id, text, lineage; only the epoch advances.
fn carried(prompt: &PromptVersion, epoch: u32) -> PromptVersion {
    PromptVersion {
        id: prompt.id.clone(),
        epoch,
        text: prompt.text.clone(),
        parent_id: prompt.parent_id.clone(),
        provenance: prompt.provenance,
    }
}

struct Clients {
    system: LmClient,
    feedbacker: LmClient,
    rewriter: LmClient,
}

fn build_clients(config: &RunConfig, store: &RunStore) -> Result<Clients, OptError> {
    let backend = config.backend.build(store.root())?;
    Ok(Clients {
        system: LmClient::new(backend.clone(), config.roles.system.clone(), config.retry.clone()),
        feedbacker: LmClient::new(
            backend.clone(),
            config.roles.feedbacker.clone(),
            config.retry.clone(),
        ),
        rewriter: LmClient::new(backend, config.roles.rewriter.clone(), config.retry.clone()),
    })
}

/// A prompt-writer call that drafts a seed instruction from sample tasks.
pub fn generate_seed_prompt(
    samples: &[&TaskInstance],
    meta: &MetaPrompts,
    backend: crate::gateway::SharedBackend,
    binding: crate::gateway::RoleBinding,
    retry: RetryPolicy,
) -> Result<String, OptError> {
    let examples: Vec<String> = samples
        .iter()
        .enumerate()
        .map(|(i, task)| format!("Sample {}:\n{}", i + 1, task.payload))
        .collect();
    let input = meta.prompt_writer.render(&[("examples", &examples.join("\n\n"))]);
    let client = LmClient::new(backend, binding, retry);
    let mut records = Vec::new();
    let response = client.call(
        "prompt-writer",
        vec![crate::model::ChatMessage::user(input)],
        &mut records,
    )?;
    match crate::rewriter::extract_prompt_block(&response.text) {
        Some(text) => Ok(text),
        None => Ok(response.text.trim().to_string()),
    }
}

struct SeedState {
    incumbent: PromptVersion,
    buffer: ReplayBuffer,
    curve: Vec<(u32, f64)>,
    epoch_records: Vec<EpochRecord>,
}

impl SeedState {
    fn next_epoch(&self) -> u32 {
        self.curve.last().map(|(e, _)| e + 1).unwrap_or(1)
    }
}

struct SeedRunner<'a> {
    config: &'a RunConfig,
    config_digest: String,
    provider: &'a EnvProvider,
    meta: &'a MetaPrompts,
    clients: &'a Clients,
    store: &'a RunStore,
    seed: u64,
    train: Vec<&'a TaskInstance>,
    validation: Vec<&'a TaskInstance>,
}

impl SeedRunner<'_> {
    fn run(&self, options: &OptimizeOptions) -> Result<RunRecord, OptError> {
        let path = self.store.log_path(self.seed);
        let run_id = &self.config.run_id;

        if let Some(redo) = options.redo_from_epoch {
            self.discard_from_epoch(&path, redo)?;
        }

        let (mut writer, mut state) = if path.exists() {
            let loaded = self.store.load_run(self.seed)?;
            if loaded.record.config_digest != self.config_digest {
                return Err(OptError::State(
                    "run log was produced by a different config; refusing to resume".into(),
                ));
            }
            if loaded.record.complete {
                return Ok(loaded.record);
            }
            // Drop any partially written epoch, then continue in place.
            crate::store::truncate_records(&path, loaded.resume_offset)?;
            let writer = RecordWriter::open(&path, run_id, loaded.resume_seq)?;
            let state = self.rebuild_state(&loaded)?;
            (writer, state)
        } else {
            let initial = self.store.read_initial_prompt()?;
            if initial.epoch != 1 {
                return Err(OptError::State("initial prompt must be an epoch-1 seed".into()));
            }
            let mut writer = RecordWriter::open(&path, run_id, 0)?;
            writer.append(
                0,
                RecordBody::Config {
                    config: self.config.clone(),
                    seed: self.seed,
                    config_digest: self.config_digest.clone(),
                },
            )?;
            writer.append(0, RecordBody::Prompt { prompt: initial.clone() })?;
            let evaluation = evaluate_prompt(
                self.provider,
                &self.validation,
                &initial,
                self.seed,
                run_id,
                "e0",
                &self.clients.system,
            )?;
            self.write_evaluation(&mut writer, 0, None, &initial.id, &evaluation)?;
            writer.append(
                0,
                RecordBody::CurvePoint { epoch: 0, score: evaluation.mean.value },
            )?;
            let state = SeedState {
                incumbent: initial,
                buffer: ReplayBuffer::new(),
                curve: vec![(0, evaluation.mean.value)],
                epoch_records: Vec::new(),
            };
            (writer, state)
        };

        while state.next_epoch() <= self.config.epochs {
            let epoch = state.next_epoch();
            if options.stop_after_epoch.is_some_and(|stop| epoch > stop) {
                return Ok(self.partial_record(state, false));
            }
            self.run_one_epoch(&mut writer, &mut state, epoch)?;
        }
        writer.append(self.config.epochs, RecordBody::RunComplete)?;
        Ok(self.partial_record(state, true))
    }

    /// Truncate the stream to the boundary before `redo`, dropping that
    /// epoch and everything after it.
    fn discard_from_epoch(&self, path: &std::path::Path, redo: u32) -> Result<(), OptError> {
        if redo < 1 {
            return Err(OptError::InvalidArgument("redo epoch must be >= 1".into()));
        }
        if !path.exists() {
            return Ok(());
        }
        let loaded = self.store.load_run(self.seed)?;
        let completed = loaded.record.epoch_records.len() as u32;
        if redo > completed {
            return Ok(());
        }
        let boundary = loaded
            .boundaries
            .iter()
            .find(|b| b.epoch == redo - 1)
            .ok_or_else(|| OptError::State(format!("no boundary before epoch {redo}")))?;
        crate::store::truncate_records(path, boundary.offset)?;
        Ok(())
    }

    fn partial_record(&self, state: SeedState, complete: bool) -> RunRecord {
        RunRecord {
            run_id: self.config.run_id.clone(),
            config: self.config.clone(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            epoch_records: state.epoch_records,
            training_curve: state.curve,
            complete,
        }
    }

    fn rebuild_state(&self, loaded: &crate::store::LoadedRun) -> Result<SeedState, OptError> {
        let completed = loaded.record.epoch_records.len() as u32;
        if loaded.record.training_curve.len() != completed as usize + 1 {
            return Err(OptError::State(format!(
                "curve has {} points for {completed} completed epochs",
                loaded.record.training_curve.len()
            )));
        }
        let prompt_at_epoch = |epoch: u32| -> Result<&PromptVersion, OptError> {
            loaded
                .prompts
                .iter()
                .rev()
                .find(|p| p.epoch == epoch)
                .ok_or_else(|| OptError::State(format!("no prompt version for epoch {epoch}")))
        };
        let mut buffer = ReplayBuffer::new();
        for record in &loaded.record.epoch_records {
            let feedback = loaded
                .feedbacks
                .iter()
                .find(|f| f.epoch == record.epoch)
                .ok_or_else(|| {
                    OptError::State(format!("no feedback record for epoch {}", record.epoch))
                })?;
            let prompt = prompt_at_epoch(record.epoch)?;
            buffer
                .push(ReplayEntry {
                    epoch: record.epoch,
                    prompt_id: prompt.id.clone(),
                    prompt_text: prompt.text.clone(),
                    feedback_text: feedback.aggregate_text.clone(),
                })
                .map_err(|e| OptError::State(e.to_string()))?;
        }
        let incumbent = prompt_at_epoch(completed + 1)?.clone();
        Ok(SeedState {
            incumbent,
            buffer,
            curve: loaded.record.training_curve.clone(),
            epoch_records: loaded.record.epoch_records.clone(),
        })
    }

    fn write_calls(
        &self,
        writer: &mut RecordWriter,
        epoch: u32,
        phase: &str,
        calls: Vec<CallRecord>,
    ) -> Result<(), OptError> {
        for call in calls {
            writer.append(epoch, RecordBody::LmCall { phase: phase.to_string(), call })?;
        }
        Ok(())
    }

    fn write_evaluation(
        &self,
        writer: &mut RecordWriter,
        epoch: u32,
        candidate_index: Option<u32>,
        prompt_id: &str,
        evaluation: &Evaluation,
    ) -> Result<(), OptError> {
        for call in &evaluation.records {
            writer.append(
                epoch,
                RecordBody::LmCall { phase: "evaluate".to_string(), call: call.clone() },
            )?;
        }
        writer.append(
            epoch,
            RecordBody::Evaluation {
                evaluation: EvaluationRecord {
                    epoch,
                    candidate_index,
                    prompt_id: prompt_id.to_string(),
                    per_task: evaluation.per_task.clone(),
                    mean: evaluation.mean,
                },
            },
        )?;
        Ok(())
    }

    fn epoch_feedback(
        &self,
        epoch: u32,
        batch: &[Trajectory],
        writer: &mut RecordWriter,
    ) -> Result<EpochFeedback, OptError> {
        if let Some(human) = self.store.active_review(self.seed, epoch)? {
            let feedback = feedback::human_feedback(
                epoch,
                batch.iter().map(|t| t.id.clone()).collect(),
                &human.per_trajectory,
                human.aggregate.clone(),
            );
            return Ok(feedback);
        }
        let scores: Vec<Score> = batch.iter().map(|t| t.outcome.expect("judged")).collect();
        let mut calls = Vec::new();
        let feedback = match self.config.feedback_style {
            FeedbackStyle::Mc => feedback::mc_feedback(
                epoch,
                batch,
                &self.config.signals,
                self.meta,
                &self.clients.feedbacker,
                &mut calls,
            )?,
            FeedbackStyle::Td => feedback::td_feedback(
                epoch,
                batch,
                &self.config.signals,
                self.meta,
                &self.clients.feedbacker,
                &mut calls,
            )?,
            FeedbackStyle::Numeric => feedback::numeric_feedback(epoch, batch, &scores)?,
            FeedbackStyle::BinaryLabel => feedback::binary_label_feedback(
                epoch,
                batch,
                &scores,
                &self.config.signals,
                self.meta,
                &self.clients.feedbacker,
                &mut calls,
            )?,
            FeedbackStyle::Human => unreachable!("rejected by config validation"),
        };
        self.write_calls(writer, epoch, "feedback", calls)?;
        Ok(feedback)
    }

    fn run_one_epoch(
        &self,
        writer: &mut RecordWriter,
        state: &mut SeedState,
        epoch: u32,
    ) -> Result<(), OptError> {
        let incumbent = state.incumbent.clone();
        debug_assert_eq!(incumbent.epoch, epoch);

        let outcomes = collect_batch(
            self.provider,
            &self.train,
            &incumbent,
            self.config.batch_size,
            self.seed,
            epoch,
            &self.config.run_id,
            &self.clients.system,
        )?;
        let mut batch = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            self.write_calls(writer, epoch, "collect", outcome.records)?;
            writer.append(
                epoch,
                RecordBody::Trajectory { trajectory: outcome.trajectory.clone() },
            )?;
            batch.push(outcome.trajectory);
        }

        let epoch_feedback = self.epoch_feedback(epoch, &batch, writer)?;
        writer.append(epoch, RecordBody::Feedback { feedback: epoch_feedback.clone() })?;

        state
            .buffer
            .push(ReplayEntry {
                epoch,
                prompt_id: incumbent.id.clone(),
                prompt_text: incumbent.text.clone(),
                feedback_text: epoch_feedback.aggregate_text.clone(),
            })
            .map_err(|e| OptError::State(e.to_string()))?;

        let mut rewrite_calls = Vec::new();
        let inputs = RewriteInputs {
            incumbent: &incumbent,
            feedback: &epoch_feedback,
            buffer: &state.buffer,
            history_budget: self.config.history_budget as usize,
        };
        let generated = match generate_candidates(
            self.config.rewrite_mode,
            &inputs,
            self.meta,
            &self.clients.rewriter,
            self.config.k,
            &mut rewrite_calls,
        ) {
            Ok(generated) => generated,
            Err(RewriteError::Epoch) => {
                self.write_calls(writer, epoch, "rewrite", rewrite_calls)?;
                writer.append(
                    epoch,
                    RecordBody::Warning {
                        message: format!("epoch {epoch}: every rewrite failed; epoch skipped"),
                    },
                )?;
                let record = EpochRecord {
                    epoch,
                    incumbent_prompt_id: incumbent.id.clone(),
                    batch_trajectory_ids: batch.iter().map(|t| t.id.clone()).collect(),
                    feedback_style: epoch_feedback.style,
                    candidates: Vec::new(),
                    selected_index: 0,
                    selected_prompt_id: incumbent.id.clone(),
                    skipped: true,
                };
                writer.append(epoch, RecordBody::EpochSummary { record: record.clone() })?;
                let score = state.curve.last().map(|(_, s)| *s).unwrap_or(0.0);
                let next = carried(&incumbent, epoch + 1);
                writer.append(epoch, RecordBody::Prompt { prompt: next.clone() })?;
                // The curve point commits the epoch: resume truncates to the
                // last one, so it must be the final record of the block.
                writer.append(epoch, RecordBody::CurvePoint { epoch, score })?;
                state.epoch_records.push(record);
                state.curve.push((epoch, score));
                state.incumbent = next;
                return Ok(());
            }
            Err(other) => return Err(other.into()),
        };
        self.write_calls(writer, epoch, "rewrite", rewrite_calls)?;
        for warning in &generated.warnings {
            writer.append(epoch, RecordBody::Warning { message: warning.clone() })?;
        }
        if has_duplicate_texts(&generated.candidates) {
            writer.append(
                epoch,
                RecordBody::Warning {
                    message: format!("epoch {epoch}: duplicate candidate texts"),
                },
            )?;
        }

        // Score candidates on the fixed validation split, in parallel.
        let evaluated: Vec<Result<(PromptVersion, Evaluation), OptError>> =
            par::map_indexed(generated.candidates.len(), |i| {
                let candidate = &generated.candidates[i];
                let version =
                    PromptVersion::rewritten(candidate.text.clone(), epoch + 1, &incumbent.id)?;
                let evaluation = evaluate_prompt(
                    self.provider,
                    &self.validation,
                    &version,
                    self.seed,
                    &self.config.run_id,
                    &format!("e{epoch}c{i}"),
                    &self.clients.system,
                )?;
                Ok((version, evaluation))
            });

        let mut candidates = generated.candidates;
        let mut versions = Vec::with_capacity(candidates.len());
        for (i, result) in evaluated.into_iter().enumerate() {
            let (version, evaluation) = result?;
            self.write_evaluation(writer, epoch, Some(i as u32), &version.id, &evaluation)?;
            candidates[i].validation_score = Some(evaluation.mean);
            writer.append(
                epoch,
                RecordBody::Candidate { candidate: candidates[i].clone() },
            )?;
            versions.push(version);
        }

        let selected = select_candidate(&candidates)?;
        let best_score = candidates[selected].validation_score.expect("scored").value;
        let previous_score = state.curve.last().map(|(_, s)| *s).unwrap_or(0.0);
        let (next, curve_score) = if self.config.keep_incumbent && best_score < previous_score {
            writer.append(
                epoch,
                RecordBody::Warning {
                    message: format!(
                        "epoch {epoch}: keep_incumbent retained the incumbent \
                         (best candidate {best_score:.4} < incumbent {previous_score:.4})"
                    ),
                },
            )?;
            (carried(&incumbent, epoch + 1), previous_score)
        } else {
            (versions[selected].clone(), best_score)
        };

        let record = EpochRecord {
            epoch,
            incumbent_prompt_id: incumbent.id.clone(),
            batch_trajectory_ids: batch.iter().map(|t| t.id.clone()).collect(),
            feedback_style: epoch_feedback.style,
            candidates,
            selected_index: selected as u32,
            selected_prompt_id: next.id.clone(),
            skipped: false,
        };
        writer.append(epoch, RecordBody::EpochSummary { record: record.clone() })?;
        writer.append(epoch, RecordBody::Prompt { prompt: next.clone() })?;
        // The curve point commits the epoch; see the skipped-epoch branch.
        writer.append(epoch, RecordBody::CurvePoint { epoch, score: curve_score })?;

        state.epoch_records.push(record);
        state.curve.push((epoch, curve_score));
        state.incumbent = next;
        Ok(())
    }
}

fn has_duplicate_texts(candidates: &[CandidatePrompt]) -> bool {
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            if a.text == b.text {
                return true;
            }
        }
    }
    false
}

/// Run the whole optimization: per seed, an epoch-0 validation of the
/// initial prompt followed by `config.epochs` epochs, persisted
/// incrementally. Existing partial runs resume at epoch granularity;
/// complete runs are returned as-is.
pub fn optimize(
    store: &RunStore,
    bundle: Arc<TaskBundle>,
    options: &OptimizeOptions,
) -> Result<Vec<RunRecord>, OptError> {
    let config = store.read_config()?;
    config.validate()?;
    if bundle.environment_id != config.environment_id {
        return Err(OptError::InvalidArgument(format!(
            "bundle environment {} does not match config environment {}",
            bundle.environment_id, config.environment_id
        )));
    }
    let violations = bundle.validate();
    if !violations.is_empty() {
        return Err(OptError::InvalidArgument(format!(
            "task bundle is invalid: {}",
            violations.join("; ")
        )));
    }
    let _lock = store.lock()?;
    let meta = MetaPrompts::with_overrides(store.root(), &config.template_overrides)?;
    let clients = build_clients(&config, store)?;
    let provider = EnvProvider::new(bundle);

    let train = provider.bundle().split(Split::Train);
    let mut validation = provider.bundle().split(Split::Validation);
    validation.truncate(config.validation_size as usize);
    if train.is_empty() {
        return Err(OptError::InvalidArgument("bundle has no train tasks".into()));
    }
    if validation.is_empty() {
        return Err(OptError::InvalidArgument("bundle has no validation tasks".into()));
    }

    let config_digest = config.digest();
    let mut runs = Vec::with_capacity(config.seeds.len());
    for seed in &config.seeds {
        if options.only_seed.is_some_and(|only| only != *seed) {
            if store.log_path(*seed).exists() {
                runs.push(store.load_run(*seed)?.record);
            }
            continue;
        }
        let runner = SeedRunner {
            config: &config,
            config_digest: config_digest.clone(),
            provider: &provider,
            meta: &meta,
            clients: &clients,
            store,
            seed: *seed,
            train: train.clone(),
            validation: validation.clone(),
        };
        runs.push(runner.run(options)?);
    }
    Ok(runs)
}
