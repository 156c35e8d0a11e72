//! `rpo` command line: initialize a run directory from a task bundle, drive
//! the optimization loop, evaluate prompts, render reports, collect human
//! feedback, and verify persisted runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 validation/config failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use rpo_core::config::RunConfig;
use rpo_core::env::{EnvProvider, TaskBundle};
use rpo_core::model::{PromptVersion, Provenance, Split};
use rpo_core::optimizer::{evaluate_prompt, generate_seed_prompt, optimize, OptimizeOptions};
use rpo_core::report::{render_report, ReportFormat};
use rpo_core::review::collect_human_feedback;
use rpo_core::store::{RecordBody, RunStore};

#[derive(Parser)]
#[command(name = "rpo", version, about = "Iterative instruction-prompt optimisation for multi-turn agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(value: SplitArg) -> Split {
        match value {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create a run directory: validated bundle reference, config, and the
    /// initial prompt.
    Init {
        /// Task bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        /// Run directory to create.
        #[arg(long)]
        run: PathBuf,
        /// Seed the run with this prompt file (expert-written).
        #[arg(long, conflicts_with = "prompt_generated")]
        prompt_file: Option<PathBuf>,
        /// Generate the seed prompt with one model call over sample tasks.
        #[arg(long)]
        prompt_generated: bool,
        /// Use this config instead of the default scaffold.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run (or resume) the optimization across all configured seeds.
    Optimize {
        #[arg(long)]
        run: PathBuf,
        /// Stop after this epoch completes; resume later.
        #[arg(long)]
        stop_after_epoch: Option<u32>,
        /// Discard this epoch and everything after it first (e.g. to redo
        /// it with newly recorded human feedback).
        #[arg(long)]
        redo_from_epoch: Option<u32>,
        /// Touch only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a prompt file on one split of the run's bundle.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        prompt_file: PathBuf,
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitArg,
        /// Seed for episode randomness (defaults to the config's first).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render the method table and training curves into reports/.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: OutputFormat,
    },
    /// Review one epoch's collected batch and record human feedback.
    Review {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        epoch: u32,
        #[arg(long, default_value = "reviewer")]
        reviewer: String,
        /// Supersede existing feedback for this epoch.
        #[arg(long)]
        amend: bool,
    },
    /// Re-judge persisted trajectories and verify log integrity.
    ReplayRun {
        #[arg(long)]
        run: PathBuf,
        /// Verify one seed only.
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum CliError {
    /// Bad input: malformed bundle, config, or arguments (exit 2).
    Validation(String),
    /// Everything else (exit 1).
    Runtime(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn classify_opt_error(e: rpo_core::optimizer::OptError) -> CliError {
    use rpo_core::optimizer::OptError;
    match &e {
        OptError::Config(_) | OptError::InvalidArgument(_) | OptError::Template(_) => {
            CliError::Validation(e.to_string())
        }
        _ => CliError::Runtime(e.to_string()),
    }
}

fn load_bundle(config: &RunConfig, run_dir: &Path) -> Result<Arc<TaskBundle>, CliError> {
    let bundle_path = {
        let raw = PathBuf::from(&config.bundle_dir);
        if raw.is_absolute() {
            raw
        } else {
            run_dir.join(raw)
        }
    };
    TaskBundle::load(&bundle_path).map(Arc::new).map_err(CliError::validation)
}

fn default_config_scaffold(run_id: &str, environment_id: &str, bundle_dir: &str) -> RunConfig {
    serde_json::from_value(serde_json::json!({
        "run_id": run_id,
        "environment_id": environment_id,
        "feedback_style": "td",
        "rewrite_mode": "replay",
        "epochs": 8,
        "bundle_dir": bundle_dir,
        "backend": {"type": "scripted", "default_response": "ok"},
    }))
    .expect("scaffold config is valid")
}

fn cmd_init(
    bundle_path: &Path,
    run_dir: &Path,
    prompt_file: Option<&Path>,
    prompt_generated: bool,
    config_path: Option<&Path>,
) -> Result<(), CliError> {
    let bundle = TaskBundle::load(bundle_path).map_err(CliError::validation)?;
    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let bundle_abs = std::fs::canonicalize(bundle_path)
        .map_err(|e| CliError::validation(format!("bundle path: {e}")))?;

    let config = match config_path {
        Some(path) => {
            let mut config = RunConfig::load(path).map_err(CliError::validation)?;
            config.bundle_dir = bundle_abs.display().to_string();
            config
        }
        None => default_config_scaffold(
            &run_id,
            &bundle.environment_id,
            &bundle_abs.display().to_string(),
        ),
    };
    if config.environment_id != bundle.environment_id {
        return Err(CliError::Validation(format!(
            "config environment {} does not match bundle environment {}",
            config.environment_id, bundle.environment_id
        )));
    }

    let store = RunStore::create(run_dir).map_err(CliError::runtime)?;
    store.write_config(&config).map_err(CliError::runtime)?;

    let prompt = if let Some(path) = prompt_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("prompt file: {e}")))?;
        PromptVersion::seed(text.trim_end().to_string(), Provenance::SeedExpert)
            .map_err(CliError::validation)?
    } else if prompt_generated {
        let backend = config.backend.build(run_dir).map_err(CliError::validation)?;
        let meta = rpo_core::prompts::MetaPrompts::with_overrides(
            run_dir,
            &config.template_overrides,
        )
        .map_err(CliError::validation)?;
        let train = bundle.split(Split::Train);
        let samples: Vec<&rpo_core::model::TaskInstance> =
            train.iter().take(3).copied().collect();
        if samples.is_empty() {
            return Err(CliError::Validation("bundle has no train tasks to sample".into()));
        }
        let text = generate_seed_prompt(
            &samples,
            &meta,
            backend,
            config.roles.prompt_writer.clone(),
            config.retry.clone(),
        )
        .map_err(classify_opt_error)?;
        PromptVersion::seed(text, Provenance::SeedGenerated).map_err(CliError::validation)?
    } else {
        return Err(CliError::Validation(
            "provide --prompt-file <path> or --prompt-generated".into(),
        ));
    };
    store.write_initial_prompt(&prompt).map_err(CliError::runtime)?;

    println!("initialized run {run_id} at {}", run_dir.display());
    println!("  bundle: {} ({} tasks)", bundle_abs.display(), bundle.tasks.len());
    println!("  initial prompt: {} ({:?})", &prompt.id[..12], prompt.provenance);
    if config_path.is_none() {
        println!("  config scaffold written to config.json; edit before optimizing");
    }
    Ok(())
}

fn cmd_optimize(
    run_dir: &Path,
    stop_after_epoch: Option<u32>,
    redo_from_epoch: Option<u32>,
    only_seed: Option<u64>,
) -> Result<(), CliError> {
    let store = RunStore::open(run_dir).map_err(CliError::validation)?;
    let config = store.read_config().map_err(CliError::validation)?;
    config.validate().map_err(CliError::validation)?;
    let bundle = load_bundle(&config, run_dir)?;

    if redo_from_epoch.is_none() {
        let all_complete = config.seeds.iter().all(|seed| {
            store
                .load_run(*seed)
                .map(|loaded| loaded.record.complete)
                .unwrap_or(false)
        });
        if all_complete {
            println!("already complete: all {} seeds finished", config.seeds.len());
            return Ok(());
        }
    }

    let options = OptimizeOptions { stop_after_epoch, redo_from_epoch, only_seed };
    let runs = optimize(&store, bundle, &options).map_err(classify_opt_error)?;
    for run in &runs {
        let last = run.training_curve.last().map(|(_, s)| *s).unwrap_or(0.0);
        println!(
            "seed {}: {} epochs, validation {:.4}{}",
            run.seed,
            run.epoch_records.len(),
            last,
            if run.complete { "" } else { " (partial)" }
        );
    }
    Ok(())
}

fn cmd_evaluate(
    run_dir: &Path,
    prompt_file: &Path,
    split: Split,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let store = RunStore::open(run_dir).map_err(CliError::validation)?;
    let config = store.read_config().map_err(CliError::validation)?;
    config.validate().map_err(CliError::validation)?;
    let bundle = load_bundle(&config, run_dir)?;
    let text = std::fs::read_to_string(prompt_file)
        .map_err(|e| CliError::validation(format!("prompt file: {e}")))?;
    let prompt = PromptVersion::seed(text.trim_end().to_string(), Provenance::SeedExpert)
        .map_err(CliError::validation)?;

    let provider = EnvProvider::new(bundle);
    let mut tasks = provider.bundle().split(split);
    tasks.truncate(config.validation_size as usize);
    if tasks.is_empty() {
        return Err(CliError::Validation(format!("no tasks in split {split:?}")));
    }
    let backend = config.backend.build(run_dir).map_err(CliError::validation)?;
    let client = rpo_core::gateway::LmClient::new(
        backend,
        config.roles.system.clone(),
        config.retry.clone(),
    );
    let seed = seed.or_else(|| config.seeds.first().copied()).unwrap_or(1);
    let evaluation = evaluate_prompt(
        &provider,
        &tasks,
        &prompt,
        seed,
        &config.run_id,
        "adhoc",
        &client,
    )
    .map_err(classify_opt_error)?;
    for (task_id, score) in &evaluation.per_task {
        println!("{task_id}: {score:.4}");
    }
    println!(
        "mean over {} tasks: {:.4} ({})",
        evaluation.per_task.len(),
        evaluation.mean.value,
        evaluation.mean.kind.metric_name()
    );
    Ok(())
}

fn cmd_report(run_dir: &Path, format: OutputFormat) -> Result<(), CliError> {
    let store = RunStore::open(run_dir).map_err(CliError::validation)?;
    let config = store.read_config().map_err(CliError::validation)?;
    let mut runs = Vec::new();
    for seed in &config.seeds {
        if store.log_path(*seed).exists() {
            runs.push(store.load_run(*seed).map_err(CliError::runtime)?.record);
        }
    }
    if runs.is_empty() {
        return Err(CliError::Validation("no persisted runs to report".into()));
    }
    let (report_format, file_name) = match format {
        OutputFormat::Table => (ReportFormat::TableText, "report.txt"),
        OutputFormat::Csv => (ReportFormat::Csv, "report.csv"),
    };
    let rendered = render_report(&runs, report_format).map_err(CliError::runtime)?;
    let out_path = store.reports_dir().join(file_name);
    std::fs::write(&out_path, &rendered).map_err(CliError::runtime)?;
    print!("{rendered}");
    println!("written to {}", out_path.display());
    Ok(())
}

fn cmd_review(
    run_dir: &Path,
    seed: u64,
    epoch: u32,
    reviewer: &str,
    amend: bool,
) -> Result<(), CliError> {
    let store = RunStore::open(run_dir).map_err(CliError::validation)?;
    let config = store.read_config().map_err(CliError::validation)?;

    let outcome =
        rpo_core::store::read_records(&store.log_path(seed)).map_err(CliError::validation)?;
    let batch: Vec<rpo_core::model::Trajectory> = outcome
        .records
        .iter()
        .filter(|r| r.epoch == epoch)
        .filter_map(|r| match &r.body {
            RecordBody::Trajectory { trajectory } => Some(trajectory.clone()),
            _ => None,
        })
        .collect();
    if batch.is_empty() {
        return Err(CliError::Validation(format!(
            "epoch {epoch} has no collected batch in seed {seed}'s log \
             (run optimize --stop-after-epoch first)"
        )));
    }

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let record = collect_human_feedback(
        epoch,
        seed,
        reviewer,
        &batch,
        &config.signals,
        &mut stdin.lock(),
        &mut stdout.lock(),
    )
    .map_err(CliError::runtime)?;
    store.write_review(record, amend).map_err(|e| match e {
        rpo_core::store::StoreError::State(_) => CliError::validation(e),
        other => CliError::runtime(other),
    })?;
    println!(
        "recorded human feedback for seed {seed} epoch {epoch}; \
         apply it with: rpo optimize --run {} --redo-from-epoch {epoch} --seed {seed}",
        run_dir.display()
    );
    Ok(())
}

fn cmd_replay_run(run_dir: &Path, only_seed: Option<u64>) -> Result<(), CliError> {
    let store = RunStore::open(run_dir).map_err(CliError::validation)?;
    let config = store.read_config().map_err(CliError::validation)?;
    let bundle = load_bundle(&config, run_dir)?;
    let provider = EnvProvider::new(bundle);

    let seeds: Vec<u64> = match only_seed {
        Some(seed) => vec![seed],
        None => config.seeds.clone(),
    };
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for seed in seeds {
        let path = store.log_path(seed);
        if !path.exists() {
            println!("seed {seed}: no log");
            continue;
        }
        let loaded = store.load_run(seed).map_err(CliError::runtime)?;
        let outcome = rpo_core::store::read_records(&path).map_err(CliError::runtime)?;
        if let Some(tail) = &outcome.truncated_tail {
            println!("seed {seed}: note: {tail}");
        }
        for record in &outcome.records {
            if let RecordBody::Trajectory { trajectory } = &record.body {
                let task = provider
                    .bundle()
                    .tasks
                    .iter()
                    .find(|t| t.id == trajectory.task_instance_id)
                    .ok_or_else(|| {
                        CliError::Runtime(format!(
                            "trajectory {} references unknown task {}",
                            trajectory.id, trajectory.task_instance_id
                        ))
                    })?;
                let prompt_text = loaded
                    .prompts
                    .iter()
                    .find(|p| p.id == trajectory.prompt_id)
                    .map(|p| p.text.clone())
                    .ok_or_else(|| {
                        CliError::Runtime(format!(
                            "trajectory {} references unknown prompt {}",
                            trajectory.id, trajectory.prompt_id
                        ))
                    })?;
                let rejudged = provider
                    .judge(task, &prompt_text, trajectory)
                    .map_err(CliError::runtime)?;
                checked += 1;
                if Some(rejudged) != trajectory.outcome {
                    mismatches += 1;
                    println!(
                        "seed {seed}: trajectory {} outcome mismatch: stored {:?}, re-judged {:?}",
                        trajectory.id, trajectory.outcome, rejudged
                    );
                }
            }
        }
        println!(
            "seed {seed}: {} epochs, curve {:?}",
            loaded.record.epoch_records.len(),
            loaded.record.training_curve
        );
    }
    println!("re-judged {checked} trajectories, {mismatches} mismatches");
    if mismatches > 0 {
        return Err(CliError::Runtime("stored outcomes are not reproducible".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Init { bundle, run, prompt_file, prompt_generated, config } => cmd_init(
            &bundle,
            &run,
            prompt_file.as_deref(),
            prompt_generated,
            config.as_deref(),
        ),
        Command::Optimize { run, stop_after_epoch, redo_from_epoch, seed } => {
            cmd_optimize(&run, stop_after_epoch, redo_from_epoch, seed)
        }
        Command::Evaluate { run, prompt_file, split, seed } => {
            cmd_evaluate(&run, &prompt_file, split.into(), seed)
        }
        Command::Report { run, format } => cmd_report(&run, format),
        Command::Review { run, seed, epoch, reviewer, amend } => {
            cmd_review(&run, seed, epoch, &reviewer, amend)
        }
        Command::ReplayRun { run, seed } => cmd_replay_run(&run, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
