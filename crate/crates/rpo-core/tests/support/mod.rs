//! Shared fixtures for integration tests: a fully scripted keyword-task
//! optimization run that converges in four epochs, plus SQL and dialogue
//! fixture bundles.
//!
//! The scripted convergence construction: the system agent echoes whatever
//! required keywords its instruction prompt already contains, the
//! feedbacker names the first keyword missing from the transcript, and the
//! rewriter appends exactly that keyword. Scoring a prompt is the fraction
//! of keywords it contains, so the training curve climbs 0.0, 0.25, 0.5,
//! 0.75, 1.0.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rpo_core::config::{BackendSpec, RunConfig};
use rpo_core::env::dialogue::EntityDb;
use rpo_core::env::TaskBundle;
use rpo_core::feedback::{FeedbackStyle, SignalSet};
use rpo_core::gateway::ScriptRule;
use rpo_core::model::{PromptVersion, Provenance, Split, TaskInstance};
use rpo_core::rewriter::RewriteMode;
use rpo_core::store::RunStore;

pub const KEYWORDS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];
pub const SEED_PROMPT: &str = "Reply to the user.";

pub fn keyword_task(id: &str, split: Split) -> TaskInstance {
    TaskInstance {
        id: id.to_string(),
        environment_id: "keyword".to_string(),
        payload: serde_json::json!({ "required_keywords": KEYWORDS }),
        split,
    }
}

pub fn keyword_bundle() -> Arc<TaskBundle> {
    Arc::new(TaskBundle::from_parts(
        "keyword",
        vec![
            keyword_task("kw-train-0", Split::Train),
            keyword_task("kw-train-1", Split::Train),
            keyword_task("kw-val-0", Split::Validation),
        ],
        BTreeMap::new(),
    ))
}

fn prompt_after(n: usize) -> String {
    let mut text = SEED_PROMPT.to_string();
    for keyword in &KEYWORDS[..n] {
        text.push(' ');
        text.push_str(keyword);
    }
    text
}

/// The full deterministic rule set for the four-epoch convergence run.
pub fn convergence_rules() -> Vec<ScriptRule> {
    let mut rules = Vec::new();
    // System agent: echo the keywords its instruction prompt contains
    // (the prompt is part of the request's system message).
    for n in (1..=4).rev() {
        rules.push(ScriptRule::for_tag_and_needle(
            "system-agent",
            KEYWORDS[n - 1],
            format!("ok {}", KEYWORDS[..n].join(" ")),
        ));
    }
    rules.push(ScriptRule::for_tag("system-agent", "ok"));
    // Feedbacker: name the first keyword missing from the transcript.
    for n in (1..=3).rev() {
        rules.push(ScriptRule::for_tag_and_needle(
            "feedbacker",
            KEYWORDS[n - 1],
            format!(
                "sentiment: neutral\nsuccess: 0.5\nsuggestion: add the keyword {}",
                KEYWORDS[n]
            ),
        ));
    }
    rules.push(ScriptRule::for_tag(
        "feedbacker",
        format!(
            "sentiment: neutral\nsuccess: 0.5\nsuggestion: add the keyword {}",
            KEYWORDS[0]
        ),
    ));
    // Summary and aggregate: pass the suggestion through.
    for tag in ["feedbacker-summary", "feedbacker-aggregate"] {
        for keyword in KEYWORDS.iter().rev() {
            rules.push(ScriptRule::for_tag_and_needle(
                tag,
                format!("add the keyword {keyword}"),
                format!("add the keyword {keyword}"),
            ));
        }
    }
    // Rewriter: append the keyword the newest feedback names. Most-complete
    // rules first, so older feedback deeper in the replay history cannot
    // shadow the newest one.
    for n in (1..=4).rev() {
        rules.push(ScriptRule::for_tag_and_needle(
            "rewriter",
            format!("add the keyword {}", KEYWORDS[n - 1]),
            format!("```\n{}\n```", prompt_after(n)),
        ));
    }
    rules
}

pub fn convergence_config(run_id: &str, style: FeedbackStyle, mode: RewriteMode) -> RunConfig {
    RunConfig {
        run_id: run_id.to_string(),
        environment_id: "keyword".to_string(),
        feedback_style: style,
        rewrite_mode: mode,
        signals: SignalSet::FULL,
        batch_size: 2,
        k: 2,
        validation_size: 1,
        epochs: 4,
        seeds: vec![1, 2, 3, 4],
        gamma: 1.0,
        history_budget: 8,
        keep_incumbent: false,
        bundle_dir: "bundle".to_string(),
        roles: Default::default(),
        backend: BackendSpec::Scripted {
            rules: convergence_rules(),
            default_response: "ok".to_string(),
        },
        retry: rpo_core::gateway::RetryPolicy::no_retry(),
        template_overrides: BTreeMap::new(),
    }
}

/// Set up a ready-to-run store in `dir` with the given config and the
/// seed prompt.
pub fn prepared_store(dir: &Path, config: &RunConfig) -> RunStore {
    let store = RunStore::create(dir).unwrap();
    store.write_config(config).unwrap();
    let prompt = PromptVersion::seed(SEED_PROMPT, Provenance::SeedExpert).unwrap();
    store.write_initial_prompt(&prompt).unwrap();
    store
}

// --- SQL fixtures -----------------------------------------------------

pub struct SqlTaskSpec {
    pub id: &'static str,
    pub schema: &'static str,
    pub shards: &'static [&'static str],
    pub reference: &'static str,
}

pub const SCHEMA_MUSIC: &str = "\
CREATE TABLE singer(id INTEGER PRIMARY KEY, name TEXT, age INTEGER, country TEXT);\n\
INSERT INTO singer VALUES (1, 'Ada', 34, 'fr');\n\
INSERT INTO singer VALUES (2, 'Ben', 28, 'us');\n\
INSERT INTO singer VALUES (3, 'Cleo', 41, 'fr');\n\
INSERT INTO singer VALUES (4, 'Dan', 25, 'de');\n\
CREATE TABLE concert(id INTEGER PRIMARY KEY, singer_id INTEGER, year INTEGER, city TEXT);\n\
INSERT INTO concert VALUES (1, 1, 2023, 'paris');\n\
INSERT INTO concert VALUES (2, 1, 2024, 'lyon');\n\
INSERT INTO concert VALUES (3, 3, 2024, 'paris');\n\
INSERT INTO concert VALUES (4, 4, 2022, 'berlin');\n";

pub const SCHEMA_SHOP: &str = "\
CREATE TABLE product(id INTEGER PRIMARY KEY, name TEXT, price REAL, category TEXT);\n\
INSERT INTO product VALUES (1, 'pen', 1.5, 'office');\n\
INSERT INTO product VALUES (2, 'desk', 120.0, 'furniture');\n\
INSERT INTO product VALUES (3, 'chair', 60.5, 'furniture');\n\
INSERT INTO product VALUES (4, 'ink', 4.0, 'office');\n\
CREATE TABLE sale(id INTEGER PRIMARY KEY, product_id INTEGER, quantity INTEGER);\n\
INSERT INTO sale VALUES (1, 1, 10);\n\
INSERT INTO sale VALUES (2, 2, 1);\n\
INSERT INTO sale VALUES (3, 3, 4);\n\
INSERT INTO sale VALUES (4, 1, 7);\n";

pub const SCHEMA_SCHOOL: &str = "\
CREATE TABLE student(id INTEGER PRIMARY KEY, name TEXT, grade INTEGER);\n\
INSERT INTO student VALUES (1, 'Eve', 9);\n\
INSERT INTO student VALUES (2, 'Finn', 10);\n\
INSERT INTO student VALUES (3, 'Gus', 9);\n\
CREATE TABLE enrollment(student_id INTEGER, course TEXT);\n\
INSERT INTO enrollment VALUES (1, 'math');\n\
INSERT INTO enrollment VALUES (1, 'art');\n\
INSERT INTO enrollment VALUES (2, 'math');\n\
INSERT INTO enrollment VALUES (3, 'music');\n";

pub const SQL_TASKS: [SqlTaskSpec; 12] = [
    SqlTaskSpec {
        id: "sql-music-names",
        schema: SCHEMA_MUSIC,
        shards: &["list singer names", "only those older than 30"],
        reference: "SELECT name FROM singer WHERE age > 30",
    },
    SqlTaskSpec {
        id: "sql-music-count",
        schema: SCHEMA_MUSIC,
        shards: &["count the singers", "only from fr"],
        reference: "SELECT COUNT(*) FROM singer WHERE country = 'fr'",
    },
    SqlTaskSpec {
        id: "sql-music-ordered",
        schema: SCHEMA_MUSIC,
        shards: &["list singer names", "sorted by age descending"],
        reference: "SELECT name FROM singer ORDER BY age DESC",
    },
    SqlTaskSpec {
        id: "sql-music-join",
        schema: SCHEMA_MUSIC,
        shards: &["which cities had concerts", "only in 2024"],
        reference: "SELECT city FROM concert WHERE year = 2024",
    },
    SqlTaskSpec {
        id: "sql-shop-cheap",
        schema: SCHEMA_SHOP,
        shards: &["list product names", "cheaper than 10"],
        reference: "SELECT name FROM product WHERE price < 10",
    },
    SqlTaskSpec {
        id: "sql-shop-category",
        schema: SCHEMA_SHOP,
        shards: &["average price per category"],
        reference: "SELECT category, AVG(price) FROM product GROUP BY category",
    },
    SqlTaskSpec {
        id: "sql-shop-sales",
        schema: SCHEMA_SHOP,
        shards: &["total quantity sold", "for the pen only"],
        reference: "SELECT SUM(s.quantity) FROM sale s JOIN product p ON s.product_id = p.id WHERE p.name = 'pen'",
    },
    SqlTaskSpec {
        id: "sql-shop-expensive",
        schema: SCHEMA_SHOP,
        shards: &["the most expensive product name"],
        reference: "SELECT name FROM product ORDER BY price DESC LIMIT 1",
    },
    SqlTaskSpec {
        id: "sql-school-grade9",
        schema: SCHEMA_SCHOOL,
        shards: &["student names", "in grade 9"],
        reference: "SELECT name FROM student WHERE grade = 9",
    },
    SqlTaskSpec {
        id: "sql-school-courses",
        schema: SCHEMA_SCHOOL,
        shards: &["distinct courses"],
        reference: "SELECT DISTINCT course FROM enrollment",
    },
    SqlTaskSpec {
        id: "sql-school-math",
        schema: SCHEMA_SCHOOL,
        shards: &["names of students", "taking math"],
        reference: "SELECT st.name FROM student st JOIN enrollment e ON st.id = e.student_id WHERE e.course = 'math'",
    },
    SqlTaskSpec {
        id: "sql-school-counts",
        schema: SCHEMA_SCHOOL,
        shards: &["courses per student id", "ordered by student id"],
        reference: "SELECT student_id, COUNT(*) FROM enrollment GROUP BY student_id ORDER BY student_id",
    },
];

pub fn sql_task_instance(spec: &SqlTaskSpec, split: Split) -> TaskInstance {
    TaskInstance {
        id: spec.id.to_string(),
        environment_id: "sharded-sql".to_string(),
        payload: serde_json::json!({
            "id": spec.id,
            "schema_ddl": spec.schema,
            "shards": spec.shards,
            "reference_sql": spec.reference,
        }),
        split,
    }
}

pub fn sql_bundle() -> Arc<TaskBundle> {
    let tasks = SQL_TASKS
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            sql_task_instance(spec, if i % 3 == 2 { Split::Validation } else { Split::Train })
        })
        .collect();
    Arc::new(TaskBundle::from_parts("sharded-sql", tasks, BTreeMap::new()))
}

// --- Dialogue fixtures --------------------------------------------------

pub fn fixture_entity_db() -> EntityDb {
    serde_json::from_value(serde_json::json!({
        "domains": {
            "hotel": [
                {"name": "Alpha Hotel", "price": "cheap", "area": "centre",
                 "phone": "01223-111", "stars": "3"},
                {"name": "Beta Lodge", "price": "expensive", "area": "centre",
                 "phone": "01223-222", "stars": "5"},
                {"name": "Gamma Inn", "price": "cheap", "area": "north",
                 "phone": "01223-333", "stars": "2"}
            ],
            "restaurant": [
                {"name": "Olive Table", "food": "italian", "price": "moderate",
                 "phone": "01223-444", "area": "centre"},
                {"name": "Spice Corner", "food": "indian", "price": "cheap",
                 "phone": "01223-555", "area": "south"}
            ]
        }
    }))
    .unwrap()
}

pub fn dialogue_task(
    id: &str,
    constraints: serde_json::Value,
    requests: serde_json::Value,
    domains: serde_json::Value,
    split: Split,
) -> TaskInstance {
    TaskInstance {
        id: id.to_string(),
        environment_id: "dialogue".to_string(),
        payload: serde_json::json!({
            "goal": {
                "id": format!("goal-{id}"),
                "domains": domains,
                "constraints": constraints,
                "requests": requests,
            },
            "db_ref": "main",
        }),
        split,
    }
}

pub fn dialogue_bundle() -> Arc<TaskBundle> {
    let mut dbs = BTreeMap::new();
    dbs.insert("main".to_string(), fixture_entity_db());
    let tasks = vec![
        dialogue_task(
            "dlg-hotel-phone",
            serde_json::json!({"hotel": {"price": "cheap", "area": "centre"}}),
            serde_json::json!([{"domain": "hotel", "slot": "phone"}]),
            serde_json::json!(["hotel"]),
            Split::Train,
        ),
        dialogue_task(
            "dlg-hotel-stars",
            serde_json::json!({"hotel": {"area": "north"}}),
            serde_json::json!([{"domain": "hotel", "slot": "stars"}]),
            serde_json::json!(["hotel"]),
            Split::Train,
        ),
        dialogue_task(
            "dlg-restaurant",
            serde_json::json!({"restaurant": {"food": "italian"}}),
            serde_json::json!([{"domain": "restaurant", "slot": "phone"}]),
            serde_json::json!(["restaurant"]),
            Split::Validation,
        ),
        dialogue_task(
            "dlg-multi-domain",
            serde_json::json!({"hotel": {"price": "cheap"}, "restaurant": {"price": "cheap"}}),
            serde_json::json!([{"domain": "hotel", "slot": "phone"}]),
            serde_json::json!(["hotel", "restaurant"]),
            Split::Train,
        ),
    ];
    Arc::new(TaskBundle::from_parts("dialogue", tasks, dbs))
}
