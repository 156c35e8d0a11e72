//! Goal-driven task-oriented dialogue with a rule-based (agenda-style)
//! simulated user, so optimization runs over it are fully deterministic.
//!
//! The user holds a goal: per-domain slot constraints to communicate and
//! request slots to learn. The system agent may query the entity database
//! mid-turn with an `API: find(domain=..., slot=value)` line. An episode
//! succeeds when, for every constrained domain, some offered entity
//! satisfies all constraints and every requested slot was answered with
//! that entity's true value.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvStepResult, Environment, InitialContext};
use crate::model::{ApiCall, Score, TaskInstance, Trajectory};

const MAX_TURNS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSlot {
    pub domain: String,
    pub slot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueGoal {
    pub id: String,
    pub domains: Vec<String>,
    /// domain -> slot -> required value (informable constraints).
    pub constraints: BTreeMap<String, BTreeMap<String, String>>,
    /// Slots the user must learn, each tied to one of the goal's domains.
    pub requests: Vec<RequestSlot>,
}

impl DialogueGoal {
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.domains.is_empty() {
            violations.push(format!("goal {}: needs at least one domain", self.id));
        }
        let domains: BTreeSet<&str> = self.domains.iter().map(|d| d.as_str()).collect();
        for request in &self.requests {
            if !domains.contains(request.domain.as_str()) {
                violations.push(format!(
                    "goal {}: request slot {}.{} names an unlisted domain",
                    self.id, request.domain, request.slot
                ));
            }
        }
        for domain in self.constraints.keys() {
            if !domains.contains(domain.as_str()) {
                violations.push(format!(
                    "goal {}: constraints name an unlisted domain {domain}",
                    self.id
                ));
            }
        }
        violations
    }

    /// Plain-text statement of the goal, the trajectory-level context the
    /// feedbacker sees when the goal signal is enabled.
    pub fn render(&self) -> String {
        let mut parts = vec![format!("You are looking for: {}.", self.domains.join(", "))];
        for (domain, slots) in &self.constraints {
            for (slot, value) in slots {
                parts.push(format!("The {domain} {slot} should be {value}."));
            }
        }
        if !self.requests.is_empty() {
            let wanted: Vec<String> = self
                .requests
                .iter()
                .map(|r| format!("{} {}", r.domain, r.slot))
                .collect();
            parts.push(format!("Find out: {}.", wanted.join(", ")));
        }
        parts.join(" ")
    }
}

/// Per-domain entity lists; every entity carries a unique `name` slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDb {
    pub domains: BTreeMap<String, Vec<BTreeMap<String, String>>>,
}

impl EntityDb {
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        for (domain, entities) in &self.domains {
            let mut names = BTreeSet::new();
            for entity in entities {
                match entity.get("name") {
                    None => violations.push(format!("db domain {domain}: entity without name")),
                    Some(name) => {
                        if !names.insert(name.clone()) {
                            violations
                                .push(format!("db domain {domain}: duplicate entity name {name}"));
                        }
                    }
                }
            }
        }
        violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTaskPayload {
    pub goal: DialogueGoal,
    pub db_ref: String,
}

fn parse_payload(task: &TaskInstance) -> Result<DialogueTaskPayload, EnvError> {
    serde_json::from_value(task.payload.clone())
        .map_err(|e| EnvError::InvalidArgument(format!("bad dialogue task payload: {e}")))
}

fn eq_ci(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_ascii_lowercase().contains(&needle.to_ascii_lowercase())
}

/// All entities whose names appear in `text`, in deterministic order
/// (sorted domain, then database order).
fn offered_in<'a>(
    text: &str,
    db: &'a EntityDb,
    domains: &[String],
) -> Vec<(&'a str, &'a BTreeMap<String, String>)> {
    let mut found = Vec::new();
    for domain in domains {
        if let Some((key, entities)) = db.domains.get_key_value(domain) {
            for entity in entities {
                if let Some(name) = entity.get("name") {
                    if contains_ci(text, name) {
                        found.push((key.as_str(), entity));
                    }
                }
            }
        }
    }
    found
}

fn satisfies(entity: &BTreeMap<String, String>, constraints: &BTreeMap<String, String>) -> bool {
    constraints.iter().all(|(slot, want)| {
        entity.get(slot).map(|have| eq_ci(have, want)).unwrap_or(false)
    })
}

/// A sentence "answers" a slot when it mentions the slot without being a
/// question; "The phone is 123. Anything else?" answers phone.
fn mentions_as_answer(text: &str, slot: &str) -> bool {
    text.split_inclusive(['.', '?', '!'])
        .any(|sentence| contains_ci(sentence, slot) && !sentence.trim_end().ends_with('?'))
}

fn mentions_as_question(text: &str, slot: &str) -> bool {
    text.split_inclusive(['.', '?', '!'])
        .any(|sentence| contains_ci(sentence, slot) && sentence.trim_end().ends_with('?'))
}

pub struct DialogueEnv {
    goal: DialogueGoal,
    db: EntityDb,
    /// Constraint agenda in seed-shuffled reveal order.
    agenda: Vec<(String, String, String)>,
    given: BTreeSet<(String, String)>,
    answered: BTreeSet<(String, String)>,
    /// (domain, entity name) pairs mentioned by the system so far.
    offers: Vec<(String, String)>,
    turns: usize,
    started: bool,
    finished: bool,
}

impl DialogueEnv {
    pub fn from_task(
        task: &TaskInstance,
        dbs: &BTreeMap<String, EntityDb>,
    ) -> Result<Self, EnvError> {
        let payload = parse_payload(task)?;
        let violations = payload.goal.validate();
        if !violations.is_empty() {
            return Err(EnvError::InvalidArgument(violations.join("; ")));
        }
        let db = dbs.get(&payload.db_ref).cloned().ok_or_else(|| {
            EnvError::InvalidArgument(format!("unknown db_ref {}", payload.db_ref))
        })?;
        Ok(Self {
            goal: payload.goal,
            db,
            agenda: Vec::new(),
            given: BTreeSet::new(),
            answered: BTreeSet::new(),
            offers: Vec::new(),
            turns: 0,
            started: false,
            finished: false,
        })
    }

    pub fn goal(&self) -> &DialogueGoal {
        &self.goal
    }

    fn record_offers(&mut self, response: &str) {
        for (domain, entity) in offered_in(response, &self.db, &self.goal.domains) {
            let name = entity.get("name").cloned().unwrap_or_default();
            let key = (domain.to_string(), name);
            if !self.offers.iter().any(|o| o == &key) {
                self.offers.push(key);
            }
        }
    }

    fn entity<'a>(&'a self, domain: &str, name: &str) -> Option<&'a BTreeMap<String, String>> {
        self.db
            .domains
            .get(domain)?
            .iter()
            .find(|e| e.get("name").map(|n| eq_ci(n, name)).unwrap_or(false))
    }

    /// Some offered entity in `domain` satisfies that domain's constraints.
    fn acceptable_offer(&self, domain: &str) -> bool {
        let constraints = self.goal.constraints.get(domain);
        self.offers.iter().any(|(d, name)| {
            d == domain
                && self
                    .entity(d, name)
                    .map(|e| constraints.map(|c| satisfies(e, c)).unwrap_or(true))
                    .unwrap_or(false)
        })
    }

    fn record_answers(&mut self, response: &str) {
        let pending: Vec<RequestSlot> = self
            .goal
            .requests
            .iter()
            .filter(|r| !self.answered.contains(&(r.domain.clone(), r.slot.clone())))
            .cloned()
            .collect();
        for request in pending {
            let has_offer = self.offers.iter().any(|(d, _)| d == &request.domain);
            if has_offer && mentions_as_answer(response, &request.slot) {
                self.answered.insert((request.domain, request.slot));
            }
        }
    }

    fn goal_complete(&self) -> bool {
        let constrained_ok = self
            .goal
            .constraints
            .keys()
            .all(|domain| self.acceptable_offer(domain));
        let answered_all = self
            .goal
            .requests
            .iter()
            .all(|r| self.answered.contains(&(r.domain.clone(), r.slot.clone())));
        let requested_domains_offered = self
            .goal
            .requests
            .iter()
            .all(|r| self.offers.iter().any(|(d, _)| d == &r.domain));
        constrained_ok && answered_all && requested_domains_offered
    }

    /// First constraint violated by any entity offered in `response`,
    /// in agenda order.
    fn violated_constraint(&self, response: &str) -> Option<(String, String, String)> {
        let offered = offered_in(response, &self.db, &self.goal.domains);
        for (domain, slot, value) in &self.agenda {
            for (offer_domain, entity) in &offered {
                if offer_domain == domain {
                    if let Some(have) = entity.get(slot) {
                        if !eq_ci(have, value) {
                            return Some((domain.clone(), slot.clone(), value.clone()));
                        }
                    }
                }
            }
        }
        None
    }

    /// First constraint slot the system asked about, preferring not yet
    /// given ones.
    fn asked_constraint(&self, response: &str) -> Option<(String, String, String)> {
        if !response.contains('?') {
            return None;
        }
        let mut fallback = None;
        for (domain, slot, value) in &self.agenda {
            if mentions_as_question(response, slot) {
                let item = (domain.clone(), slot.clone(), value.clone());
                if !self.given.contains(&(domain.clone(), slot.clone())) {
                    return Some(item);
                }
                fallback.get_or_insert(item);
            }
        }
        fallback
    }

    fn next_unrevealed(&self) -> Option<(String, String, String)> {
        self.agenda
            .iter()
            .find(|(d, s, _)| !self.given.contains(&(d.clone(), s.clone())))
            .cloned()
    }

    fn next_pending_request(&self) -> Option<RequestSlot> {
        self.goal
            .requests
            .iter()
            .find(|r| {
                !self.answered.contains(&(r.domain.clone(), r.slot.clone()))
                    && self.acceptable_offer(&r.domain)
            })
            .cloned()
    }
}

impl Environment for DialogueEnv {
    fn reset(&mut self, seed: u64) -> Result<InitialContext, EnvError> {
        self.agenda = self
            .goal
            .constraints
            .iter()
            .flat_map(|(domain, slots)| {
                slots
                    .iter()
                    .map(move |(slot, value)| (domain.clone(), slot.clone(), value.clone()))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.agenda.shuffle(&mut rng);
        self.given.clear();
        self.answered.clear();
        self.offers.clear();
        self.turns = 0;
        self.started = true;
        self.finished = false;

        let mut opening = format!("Hello, I am looking for a {}.", self.goal.domains[0]);
        for (domain, slot, value) in self.agenda.iter().take(2).cloned().collect::<Vec<_>>() {
            opening.push_str(&format!(" The {slot} should be {value}."));
            self.given.insert((domain, slot));
        }

        let domains: Vec<&str> = self.goal.domains.iter().map(|d| d.as_str()).collect();
        let system_context = format!(
            "You are a booking assistant. You can search the entity database by \
             writing a line exactly of the form `API: find(domain=<domain>, <slot>=<value>, ...)`; \
             the matching entity names will be returned to you before you answer. \
             Available domains: {}. Recommend entities by name and answer the user's \
             questions about them.",
            domains.join(", ")
        );
        Ok(InitialContext {
            system_context,
            first_user_message: opening,
            goal_text: Some(self.goal.render()),
        })
    }

    fn step(&mut self, system_response: &str) -> Result<EnvStepResult, EnvError> {
        if !self.started || self.finished {
            return Err(EnvError::State("episode is not active".into()));
        }
        self.turns += 1;
        self.record_offers(system_response);
        self.record_answers(system_response);

        if self.goal_complete() {
            self.finished = true;
            let mut result = EnvStepResult::done_with("goal-complete");
            result.user_message = "Thank you, that is everything. Goodbye.".into();
            return Ok(result);
        }
        if self.turns >= MAX_TURNS {
            self.finished = true;
            return Ok(EnvStepResult::done_with("turn-cap"));
        }

        let message = if let Some((domain, slot, value)) = self.violated_constraint(system_response)
        {
            self.given.insert((domain, slot.clone()));
            format!("No, that does not work. The {slot} really needs to be {value}.")
        } else if let Some((domain, slot, value)) = self.asked_constraint(system_response) {
            self.given.insert((domain, slot.clone()));
            format!("The {slot} should be {value}.")
        } else if let Some(request) = self.next_pending_request() {
            format!("Sounds good. What is the {}?", request.slot)
        } else if let Some((domain, slot, value)) = self.next_unrevealed() {
            self.given.insert((domain, slot.clone()));
            format!("Also, the {slot} should be {value}.")
        } else {
            "Can you recommend something that fits?".to_string()
        };
        Ok(EnvStepResult { user_message: message, done: false, info: BTreeMap::new() })
    }

    fn handle_api(&mut self, call: &ApiCall) -> Option<String> {
        if !["find", "query", "search"].contains(&call.name.as_str()) {
            return Some(format!("error: unknown function {}", call.name));
        }
        let Some(domain) = call.arguments.get("domain") else {
            return Some("error: missing domain argument".into());
        };
        let Some(entities) = self.db.domains.get(domain) else {
            return Some(format!("error: unknown domain {domain}"));
        };
        let matches: Vec<&str> = entities
            .iter()
            .filter(|entity| {
                call.arguments.iter().all(|(key, value)| {
                    key == "domain"
                        || entity.get(key).map(|have| eq_ci(have, value)).unwrap_or(false)
                })
            })
            .filter_map(|entity| entity.get("name").map(|n| n.as_str()))
            .collect();
        if matches.is_empty() {
            Some("found 0 matches".into())
        } else {
            let shown: Vec<&str> = matches.iter().take(3).copied().collect();
            Some(format!("found {} matches: {}", matches.len(), shown.join(", ")))
        }
    }
}

/// Score a completed dialogue: 1.0 iff for every domain the goal constrains
/// or requests from, some offered entity satisfies all of that domain's
/// constraints and every requested slot's true value (for that entity)
/// appears in the system's responses.
pub fn judge(
    task: &TaskInstance,
    dbs: &BTreeMap<String, EntityDb>,
    trajectory: &Trajectory,
) -> Result<Score, EnvError> {
    let payload = parse_payload(task)?;
    let db = dbs
        .get(&payload.db_ref)
        .ok_or_else(|| EnvError::InvalidArgument(format!("unknown db_ref {}", payload.db_ref)))?;
    let goal = &payload.goal;

    let all_responses: String = trajectory
        .turns
        .iter()
        .map(|t| t.system_response.as_str())
        .collect::<Vec<_>>()
        .join("\n");

    let offered = offered_in(&all_responses, db, &goal.domains);

    let mut relevant_domains: BTreeSet<&str> =
        goal.constraints.keys().map(|d| d.as_str()).collect();
    for request in &goal.requests {
        relevant_domains.insert(request.domain.as_str());
    }

    let success = relevant_domains.iter().all(|domain| {
        let constraints = goal.constraints.get(*domain);
        let requests: Vec<&RequestSlot> =
            goal.requests.iter().filter(|r| r.domain == *domain).collect();
        offered.iter().any(|(offer_domain, entity)| {
            offer_domain == domain
                && constraints.map(|c| satisfies(entity, c)).unwrap_or(true)
                && requests.iter().all(|request| {
                    entity
                        .get(&request.slot)
                        .map(|truth| contains_ci(&all_responses, truth))
                        .unwrap_or(false)
                })
        })
    });

    Ok(Score::success(success))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Split, Turn};
    use serde_json::json;

    fn fixture_db() -> EntityDb {
        serde_json::from_value(json!({
            "domains": {
                "hotel": [
                    {"name": "Alpha Hotel", "price": "cheap", "area": "centre",
                     "phone": "01223-111", "stars": "3"},
                    {"name": "Beta Lodge", "price": "expensive", "area": "centre",
                     "phone": "01223-222", "stars": "5"},
                    {"name": "Gamma Inn", "price": "cheap", "area": "north",
                     "phone": "01223-333", "stars": "2"}
                ]
            }
        }))
        .unwrap()
    }

    fn dialogue_task() -> TaskInstance {
        TaskInstance {
            id: "dlg-1".into(),
            environment_id: super::super::ENV_DIALOGUE.into(),
            payload: json!({
                "goal": {
                    "id": "g1",
                    "domains": ["hotel"],
                    "constraints": {"hotel": {"price": "cheap", "area": "centre"}},
                    "requests": [{"domain": "hotel", "slot": "phone"}]
                },
                "db_ref": "main"
            }),
            split: Split::Train,
        }
    }

    fn dbs() -> BTreeMap<String, EntityDb> {
        let mut m = BTreeMap::new();
        m.insert("main".to_string(), fixture_db());
        m
    }

    fn env() -> DialogueEnv {
        DialogueEnv::from_task(&dialogue_task(), &dbs()).unwrap()
    }

    #[test]
    fn opening_is_deterministic_and_reveals_a_constraint() {
        let mut a = env();
        let mut b = env();
        let ctx_a = a.reset(42).unwrap();
        let ctx_b = b.reset(42).unwrap();
        assert_eq!(ctx_a, ctx_b);
        assert!(ctx_a.first_user_message.contains("hotel"));
        let mentions_constraint = ctx_a.first_user_message.contains("cheap")
            || ctx_a.first_user_message.contains("centre");
        assert!(mentions_constraint, "opening: {}", ctx_a.first_user_message);
    }

    #[test]
    fn successful_four_turn_dialogue_reaches_goal_complete() {
        let mut env = env();
        env.reset(7).unwrap();
        // Whatever the opening revealed, asking covers the rest.
        let r1 = env.step("What price range and what area would you like?").unwrap();
        assert!(!r1.done);
        let r2 = env.step("I recommend the Alpha Hotel, a cheap hotel in the centre.").unwrap();
        assert!(!r2.done);
        assert!(r2.user_message.contains("phone"), "got: {}", r2.user_message);
        let r3 = env.step("The phone is 01223-111.").unwrap();
        assert!(r3.done);
        assert_eq!(r3.info.get("terminal").unwrap(), "goal-complete");
    }

    #[test]
    fn violating_offer_makes_user_restate_constraint() {
        let mut env = env();
        env.reset(7).unwrap();
        let r = env.step("How about the Beta Lodge?").unwrap();
        assert!(!r.done);
        assert!(
            r.user_message.contains("price") && r.user_message.contains("cheap"),
            "got: {}",
            r.user_message
        );
    }

    #[test]
    fn episode_times_out_at_turn_cap() {
        let mut env = env();
        env.reset(7).unwrap();
        let mut last = None;
        for _ in 0..MAX_TURNS {
            last = Some(env.step("Let me think about that.").unwrap());
            if last.as_ref().unwrap().done {
                break;
            }
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.info.get("terminal").unwrap(), "turn-cap");
        assert!(env.step("more").is_err());
    }

    #[test]
    fn api_find_filters_on_slots() {
        let mut env = env();
        env.reset(7).unwrap();
        let call = crate::env::parse_api_call("API: find(domain=hotel, price=cheap)").unwrap();
        let result = env.handle_api(&call).unwrap();
        assert_eq!(result, "found 2 matches: Alpha Hotel, Gamma Inn");
        let call = crate::env::parse_api_call("API: find(domain=spa)").unwrap();
        assert!(env.handle_api(&call).unwrap().contains("unknown domain"));
        let call = crate::env::parse_api_call("API: teleport(domain=hotel)").unwrap();
        assert!(env.handle_api(&call).unwrap().contains("unknown function"));
    }

    fn turn(index: u32, user: &str, system: &str, terminal: bool) -> Turn {
        Turn {
            index,
            user_utterance: user.into(),
            system_response: system.into(),
            api_call: None,
            api_result: None,
            terminal,
        }
    }

    fn trajectory_with(turns: Vec<Turn>) -> Trajectory {
        Trajectory {
            id: "traj".into(),
            prompt_id: "p".into(),
            environment_id: super::super::ENV_DIALOGUE.into(),
            task_instance_id: "dlg-1".into(),
            goal_text: None,
            turns,
            outcome: None,
            seed: 0,
        }
    }

    #[test]
    fn judge_accepts_satisfying_offer_with_correct_answer() {
        let t = trajectory_with(vec![
            turn(1, "I need a cheap hotel in the centre", "The Alpha Hotel fits.", false),
            turn(2, "what is the phone?", "The phone is 01223-111.", true),
        ]);
        assert_eq!(judge(&dialogue_task(), &dbs(), &t).unwrap().value, 1.0);
    }

    #[test]
    fn judge_rejects_wrong_request_value() {
        let t = trajectory_with(vec![
            turn(1, "cheap, centre", "Try the Alpha Hotel.", false),
            turn(2, "phone?", "The phone is 01223-999.", true),
        ]);
        assert_eq!(judge(&dialogue_task(), &dbs(), &t).unwrap().value, 0.0);
    }

    #[test]
    fn judge_rejects_constraint_violating_offer() {
        let t = trajectory_with(vec![
            turn(1, "cheap, centre", "Book the Beta Lodge, phone 01223-222.", true),
        ]);
        assert_eq!(judge(&dialogue_task(), &dbs(), &t).unwrap().value, 0.0);
    }
}
