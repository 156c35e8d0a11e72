//! One episode: drive the system agent against an environment instance,
//! record every turn, and stamp the judged outcome. Also the deterministic
//! task-sampling schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::OptError;
use crate::env::{parse_api_call, EnvProvider};
use crate::gateway::{CallRecord, LmClient};
use crate::model::{validate_trajectory, ChatMessage, PromptVersion, TaskInstance, Trajectory};

pub const TAG_SYSTEM_AGENT: &str = "system-agent";

/// Runaway protection only; every environment caps its own episodes well
/// below this.
const HARD_TURN_CAP: usize = 64;

/// splitmix64; stable across platforms, used to derive per-episode seeds
/// from (run seed, epoch, slot) so sampling is a pure function of them.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x51_7C_C1_B7_27_22_0A_95u64;
    for part in parts {
        state = splitmix64(state ^ *part);
    }
    state
}

/// Task order for one epoch's batch: concatenated fresh permutations of the
/// split, so a task repeats only after every task was used. Returns `count`
/// indices into the split.
pub fn sample_schedule(split_len: usize, count: usize, run_seed: u64, epoch: u32) -> Vec<usize> {
    assert!(split_len > 0, "cannot sample from an empty split");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[run_seed, epoch as u64, 0x5A]));
    let mut schedule = Vec::with_capacity(count);
    while schedule.len() < count {
        let mut permutation: Vec<usize> = (0..split_len).collect();
        permutation.shuffle(&mut rng);
        schedule.extend(permutation);
    }
    schedule.truncate(count);
    schedule
}

pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub records: Vec<CallRecord>,
}

/// Run one full episode with `prompt` as the system instruction. The system
/// message is the prompt text plus the environment's own context. A single
/// API call per turn is executed between the draft response and the final
/// one, mirroring a function-calling agent's two stages.
pub fn run_episode(
    provider: &EnvProvider,
    task: &TaskInstance,
    prompt: &PromptVersion,
    episode_seed: u64,
    trajectory_id: String,
    system_client: &LmClient,
) -> Result<EpisodeOutcome, OptError> {
    let mut env = provider.make_env(task)?;
    let initial = env.reset(episode_seed)?;
    let system_message = if initial.system_context.is_empty() {
        prompt.text.clone()
    } else {
        format!("{}\n\n{}", prompt.text, initial.system_context)
    };

    let mut records = Vec::new();
    let mut messages = vec![
        ChatMessage::system(system_message),
        ChatMessage::user(initial.first_user_message.clone()),
    ];
    let mut user_message = initial.first_user_message;
    let mut turns = Vec::new();

    for index in 1..=HARD_TURN_CAP {
        let draft = system_client.call(TAG_SYSTEM_AGENT, messages.clone(), &mut records)?;
        let mut response_text = draft.text;
        let mut api_call = None;
        let mut api_result = None;
        if let Some(call) = parse_api_call(&response_text) {
            if let Some(result) = env.handle_api(&call) {
                messages.push(ChatMessage::assistant(response_text.clone()));
                messages.push(ChatMessage::tool(result.clone()));
                let finished =
                    system_client.call(TAG_SYSTEM_AGENT, messages.clone(), &mut records)?;
                api_call = Some(call);
                api_result = Some(result);
                response_text = finished.text;
            }
        }

        let step = env.step(&response_text)?;
        turns.push(crate::model::Turn {
            index: index as u32,
            user_utterance: user_message.clone(),
            system_response: response_text.clone(),
            api_call,
            api_result,
            terminal: step.done,
        });
        if step.done {
            break;
        }
        messages.push(ChatMessage::assistant(response_text));
        messages.push(ChatMessage::user(step.user_message.clone()));
        user_message = step.user_message;
    }

    if !turns.last().map(|t| t.terminal).unwrap_or(false) {
        return Err(OptError::Episode(format!(
            "episode on task {} exceeded the hard turn cap",
            task.id
        )));
    }

    let mut trajectory = Trajectory {
        id: trajectory_id,
        prompt_id: prompt.id.clone(),
        environment_id: task.environment_id.clone(),
        task_instance_id: task.id.clone(),
        goal_text: initial.goal_text,
        turns,
        outcome: None,
        seed: episode_seed,
    };
    let score = provider.judge(task, &prompt.text, &trajectory)?;
    trajectory.outcome = Some(score);

    let violations = validate_trajectory(&trajectory);
    if !violations.is_empty() {
        return Err(OptError::Episode(format!(
            "episode on task {} produced an invalid trajectory: {}",
            task.id,
            violations.join("; ")
        )));
    }
    Ok(EpisodeOutcome { trajectory, records })
}
