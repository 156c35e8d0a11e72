//! Iterative instruction-prompt optimisation for multi-turn agents.
//!
//! The core loop treats the system prompt as the parameter being optimized:
//! collect a batch of trajectories with the incumbent prompt, turn them into
//! textual feedback (whole-trajectory or turn-level), rewrite the prompt into
//! candidates (optionally replaying the full prompt/feedback history), score
//! each candidate on a validation split, and keep the best. Runs are
//! append-only logged and byte-reproducible under the scripted backend.

pub mod config;
pub mod env;
pub mod feedback;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod prompts;
pub mod report;
pub mod review;
pub mod rewriter;
pub mod store;
