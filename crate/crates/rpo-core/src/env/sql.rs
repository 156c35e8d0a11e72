//! Sharded text-to-SQL environment.
//!
//! The full request is split into shards: shard 1 carries the high-level
//! intent, later shards add one clarification each. The agent sees the
//! schema up front in its system context and is scored by executing its
//! final query against the fixture and comparing results with the
//! reference query's output.

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvStepResult, Environment, InitialContext};
use crate::model::{Score, ScoreKind, TaskInstance, Trajectory};

/// Extra turns allowed beyond one per shard before the episode is cut off.
const EXTRA_TURNS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardedSqlTask {
    pub id: String,
    /// DDL plus INSERTs defining the fixture database.
    pub schema_ddl: String,
    pub shards: Vec<String>,
    pub reference_sql: String,
}

impl ShardedSqlTask {
    pub fn from_task(task: &TaskInstance) -> Result<Self, EnvError> {
        let mut parsed: ShardedSqlTask = serde_json::from_value(task.payload.clone())
            .map_err(|e| EnvError::InvalidArgument(format!("bad sql task payload: {e}")))?;
        parsed.id = task.id.clone();
        if parsed.shards.is_empty() {
            return Err(EnvError::InvalidArgument(format!(
                "task {}: shards must be non-empty",
                task.id
            )));
        }
        Ok(parsed)
    }
}

pub struct SqlEnv {
    task: ShardedSqlTask,
    next_shard: usize,
    turns: usize,
    max_turns: usize,
    started: bool,
    finished: bool,
}

impl SqlEnv {
    pub fn from_task(task: &TaskInstance) -> Result<Self, EnvError> {
        let task = ShardedSqlTask::from_task(task)?;
        let max_turns = task.shards.len() + EXTRA_TURNS;
        Ok(Self { task, next_shard: 1, turns: 0, max_turns, started: false, finished: false })
    }
}

impl Environment for SqlEnv {
    fn reset(&mut self, _seed: u64) -> Result<InitialContext, EnvError> {
        self.next_shard = 1;
        self.turns = 0;
        self.started = true;
        self.finished = false;
        Ok(InitialContext {
            system_context: format!(
                "You are talking to a user who needs a SQL query. \
                 Answer with a single SQL query in a fenced ```sql block once you \
                 have enough information.\n\nDatabase schema:\n{}",
                self.task.schema_ddl
            ),
            first_user_message: self.task.shards[0].clone(),
            goal_text: None,
        })
    }

    fn step(&mut self, system_response: &str) -> Result<EnvStepResult, EnvError> {
        if !self.started || self.finished {
            return Err(EnvError::State("episode is not active".into()));
        }
        self.turns += 1;
        if extract_sql(system_response).is_some() {
            self.finished = true;
            return Ok(EnvStepResult::done_with("answer"));
        }
        if self.turns >= self.max_turns {
            self.finished = true;
            return Ok(EnvStepResult::done_with("turn-cap"));
        }
        if self.next_shard < self.task.shards.len() {
            let message = self.task.shards[self.next_shard].clone();
            self.next_shard += 1;
            let mut info = std::collections::BTreeMap::new();
            info.insert("shard".to_string(), self.next_shard.to_string());
            Ok(EnvStepResult { user_message: message, done: false, info })
        } else {
            Ok(EnvStepResult {
                user_message: "That is everything.".to_string(),
                done: false,
                info: std::collections::BTreeMap::new(),
            })
        }
    }
}

fn is_query_start(text: &str) -> bool {
    let head = text.trim_start().to_ascii_uppercase();
    head.starts_with("SELECT") || head.starts_with("WITH")
}

/// Pull the committed SQL answer out of a response: the last fenced block
/// labeled `sql`, or the last unlabeled fenced block starting with
/// SELECT/WITH. Bare responses count only when the whole text is a query.
/// Agents often show intermediate queries; the final block is the answer.
pub fn extract_sql(text: &str) -> Option<String> {
    let mut best: Option<String> = None;
    let mut saw_fence = false;
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after_open = &rest[open + 3..];
        let Some(close) = after_open.find("```") else {
            break;
        };
        saw_fence = true;
        let block = &after_open[..close];
        rest = &after_open[close + 3..];
        let (label, body) = match block.split_once('\n') {
            Some((first, tail)) => (first.trim().to_ascii_lowercase(), tail),
            None => (String::new(), block),
        };
        if label == "sql" {
            best = Some(body.trim().to_string());
        } else if label.is_empty() && is_query_start(body) {
            best = Some(body.trim().to_string());
        }
    }
    if best.is_some() {
        return best;
    }
    if !saw_fence && is_query_start(text) {
        return Some(text.trim().to_string());
    }
    None
}

/// One result cell as the embedded engine produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

pub type ResultTable = Vec<Vec<Cell>>;

/// Candidate SQL that fails to execute; scored as a non-match, never a
/// crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecError {
    pub message: String,
}

/// Execute `query` against a fresh in-memory database loaded from
/// `schema_ddl`. Deterministic given fixture and query.
pub fn exec_query(schema_ddl: &str, query: &str) -> Result<Result<ResultTable, ExecError>, EnvError> {
    let conn = rusqlite::Connection::open_in_memory()
        .map_err(|e| EnvError::Fixture(format!("cannot open engine: {e}")))?;
    conn.execute_batch(schema_ddl)
        .map_err(|e| EnvError::Fixture(format!("fixture schema failed to load: {e}")))?;
    let mut stmt = match conn.prepare(query) {
        Ok(stmt) => stmt,
        Err(e) => return Ok(Err(ExecError { message: e.to_string() })),
    };
    let columns = stmt.column_count();
    let mut rows = match stmt.query([]) {
        Ok(rows) => rows,
        Err(e) => return Ok(Err(ExecError { message: e.to_string() })),
    };
    let mut table = Vec::new();
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                let mut cells = Vec::with_capacity(columns);
                for i in 0..columns {
                    let value = match row.get_ref(i) {
                        Ok(v) => v,
                        Err(e) => return Ok(Err(ExecError { message: e.to_string() })),
                    };
                    cells.push(match value {
                        rusqlite::types::ValueRef::Null => Cell::Null,
                        rusqlite::types::ValueRef::Integer(i) => Cell::Int(i),
                        rusqlite::types::ValueRef::Real(f) => Cell::Real(f),
                        rusqlite::types::ValueRef::Text(t) => {
                            Cell::Text(String::from_utf8_lossy(t).into_owned())
                        }
                        rusqlite::types::ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
                    });
                }
                table.push(cells);
            }
            Ok(None) => break,
            Err(e) => return Ok(Err(ExecError { message: e.to_string() })),
        }
    }
    Ok(Ok(table))
}

/// Canonical cell for comparison: numerics compared by value (integer and
/// real unified), text byte-equal, NULL equal only to NULL.
#[derive(Debug, Clone, PartialEq)]
enum Canon {
    Null,
    Num(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Canon {
    fn rank(&self) -> u8 {
        match self {
            Canon::Null => 0,
            Canon::Num(_) => 1,
            Canon::Text(_) => 2,
            Canon::Blob(_) => 3,
        }
    }
}

impl Eq for Canon {}

impl Ord for Canon {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Canon::Num(a), Canon::Num(b)) => a.total_cmp(b),
            (Canon::Text(a), Canon::Text(b)) => a.cmp(b),
            (Canon::Blob(a), Canon::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Canon {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn canonicalize(cell: &Cell) -> Canon {
    match cell {
        Cell::Null => Canon::Null,
        Cell::Int(i) => Canon::Num(*i as f64),
        Cell::Real(f) => Canon::Num(if *f == 0.0 { 0.0 } else { *f }),
        Cell::Text(t) => Canon::Text(t.clone()),
        Cell::Blob(b) => Canon::Blob(b.clone()),
    }
}

fn canonicalize_table(table: &ResultTable) -> Vec<Vec<Canon>> {
    table.iter().map(|row| row.iter().map(canonicalize).collect()).collect()
}

/// True when the reference query orders its output at the top level, i.e.
/// an ORDER BY outside any parentheses or string literal.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let upper = sql.to_ascii_uppercase();
    let bytes = upper.as_bytes();
    let mut depth = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'\'' | b'"' => {
                let quote = bytes[i];
                i += 1;
                while i < bytes.len() && bytes[i] != quote {
                    i += 1;
                }
            }
            b'(' => depth += 1,
            b')' => depth = depth.saturating_sub(1),
            b'O' if depth == 0 => {
                let rest = &upper[i..];
                if rest.starts_with("ORDER")
                    && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric())
                {
                    let after = rest["ORDER".len()..].trim_start();
                    let beyond = after.as_bytes().get(2).copied();
                    if after.starts_with("BY")
                        && beyond.is_none_or(|b| !b.is_ascii_alphanumeric())
                    {
                        return true;
                    }
                }
            }
            _ => {}
        }
        i += 1;
    }
    false
}

/// Compare executed result tables. Rows are compared as multisets after
/// cell canonicalization, except when the reference query has a top-level
/// ORDER BY, in which case row order matters. Column order is respected as
/// produced.
pub fn compare_results(
    candidate: &ResultTable,
    reference: &ResultTable,
    reference_sql: &str,
) -> bool {
    let mut cand = canonicalize_table(candidate);
    let mut refr = canonicalize_table(reference);
    if cand.len() != refr.len() {
        return false;
    }
    if !has_top_level_order_by(reference_sql) {
        cand.sort();
        refr.sort();
    }
    cand == refr
}

/// Score a completed episode: extract the final query from the terminal
/// response, execute it, compare with the reference output. Execution
/// errors and missing answers score 0.0.
pub fn judge(task: &TaskInstance, trajectory: &Trajectory) -> Result<Score, EnvError> {
    let task = ShardedSqlTask::from_task(task)?;
    let reference = exec_query(&task.schema_ddl, &task.reference_sql)?
        .map_err(|e| EnvError::Fixture(format!("reference query failed: {}", e.message)))?;
    let terminal = trajectory
        .turns
        .iter()
        .find(|t| t.terminal)
        .ok_or_else(|| EnvError::State("trajectory has no terminal turn".into()))?;
    let matched = match extract_sql(&terminal.system_response) {
        None => false,
        Some(candidate_sql) => match exec_query(&task.schema_ddl, &candidate_sql)? {
            Err(_) => false,
            Ok(candidate) => compare_results(&candidate, &reference, &task.reference_sql),
        },
    };
    Ok(Score {
        kind: ScoreKind::FunctionalAccuracy,
        value: if matched { 1.0 } else { 0.0 },
    })
}
