//! Command grammar: verb + goal name, optional obstacle mention, clauses
//! joined by "then".

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{ReasonerQuery, NOOP};
use crate::topics::MISSION_COMMAND;

pub const DEFAULT_RETRY_BUDGET: u32 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("empty command")]
    Empty,
    #[error("cannot interpret `{0}`")]
    Unparseable(String),
    #[error("goal table: {0}")]
    Table(String),
}

/// Named locations known to the commander.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoalTable(BTreeMap<String, [f64; 3]>);

const LOCATION_PREFIX: &str = "location ";

impl GoalTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, p: [f64; 3]) -> Self {
        self.0.insert(name.trim().to_lowercase(), p);
        self
    }

    pub fn get(&self, name: &str) -> Option<[f64; 3]> {
        self.0.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Domain-knowledge facts of the form `location goal 1: 8.25, 4.75, 1`.
    pub fn to_knowledge(&self) -> Vec<String> {
        self.0
            .iter()
            .map(|(n, p)| format!("{LOCATION_PREFIX}{n}: {}, {}, {}", p[0], p[1], p[2]))
            .collect()
    }

    pub fn from_knowledge(facts: &[String]) -> Result<Self, InterpretError> {
        let mut t = GoalTable::new();
        for f in facts {
            let Some(rest) = f.strip_prefix(LOCATION_PREFIX) else {
                continue;
            };
            let (name, coords) = rest
                .split_once(':')
                .ok_or_else(|| InterpretError::Table(format!("missing `:` in `{f}`")))?;
            let v: Vec<f64> = coords
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| InterpretError::Table(format!("bad coordinates in `{f}`")))?;
            let [x, y, z] = v[..] else {
                return Err(InterpretError::Table(format!("expected three coordinates in `{f}`")));
            };
            let key = name.trim().to_lowercase();
            if t.0.contains_key(&key) {
                return Err(InterpretError::Table(format!("duplicate location `{key}`")));
            }
            t.0.insert(key, [x, y, z]);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Goto,
    Inspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub verb: Verb,
    pub goal: String,
    pub avoid_obstacles: bool,
}

impl Task {
    pub fn new(verb: Verb, goal: &str, avoid_obstacles: bool) -> Self {
        Self {
            verb,
            goal: goal.into(),
            avoid_obstacles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    pub retry_budget: u32,
}

impl TaskGraph {
    pub fn to_payload(&self) -> Value {
        json!({"tasks": self.tasks, "retry_budget": self.retry_budget})
    }

    pub fn from_payload(v: &Value) -> Option<Self> {
        let tasks = serde_json::from_value(v.get("tasks")?.clone()).ok()?;
        let retry_budget = v
            .get("retry_budget")
            .and_then(Value::as_u64)
            .unwrap_or(DEFAULT_RETRY_BUDGET as u64) as u32;
        Some(Self { tasks, retry_budget })
    }
}

const VERBS: &[(&str, Verb)] = &[
    ("go to", Verb::Goto),
    ("inspect", Verb::Inspect),
    ("check", Verb::Inspect),
];
const AVOID_PATTERNS: &[&str] = &["obstacle", "box", "on the way", "on your way", "check for any"];

/// Byte offset of `needle` in `hay` as a whole phrase.
fn find_phrase(hay: &str, needle: &str) -> Option<usize> {
    let bytes = hay.as_bytes();
    let mut from = 0;
    while let Some(off) = hay[from..].find(needle) {
        let at = from + off;
        let end = at + needle.len();
        let before_ok = at == 0 || !bytes[at - 1].is_ascii_alphanumeric();
        let after_ok = end == hay.len() || !bytes[end].is_ascii_alphanumeric();
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + 1;
    }
    None
}

fn mentions_obstacles(clause: &str) -> bool {
    AVOID_PATTERNS.iter().any(|p| clause.contains(p))
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == ' ' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn clause_task(clause: &str, table: &GoalTable) -> Option<Task> {
    let (goal_at, goal) = table
        .names()
        .filter_map(|n| find_phrase(clause, n).map(|at| (at, n)))
        .min_by_key(|&(at, n)| (at, std::cmp::Reverse(n.len())))?;
    let (_, verb) = VERBS
        .iter()
        .filter_map(|(w, v)| find_phrase(clause, w).filter(|&at| at < goal_at).map(|at| (at, *v)))
        .min_by_key(|&(at, _)| at)?;
    Some(Task::new(verb, goal, mentions_obstacles(clause)))
}

/// Pure grammar over the goal table. Avoidance is set only by an explicit
/// obstacle mention in the clause; otherwise the plan is direct.
pub fn interpret(command: &str, table: &GoalTable) -> Result<TaskGraph, InterpretError> {
    let text = normalize(command);
    if text.is_empty() {
        return Err(InterpretError::Empty);
    }
    let mut tasks = Vec::new();
    for clause in text.split(" then ").map(str::trim).filter(|c| !c.is_empty()) {
        let clause = clause.strip_prefix("and ").unwrap_or(clause);
        tasks.push(clause_task(clause, table).ok_or_else(|| InterpretError::Unparseable(command.to_string()))?);
    }
    if tasks.is_empty() {
        return Err(InterpretError::Unparseable(command.to_string()));
    }
    Ok(TaskGraph {
        tasks,
        retry_budget: DEFAULT_RETRY_BUDGET,
    })
}

/// The ten reference prompts and the task graphs they must produce.
pub fn reference_prompts() -> Vec<(&'static str, Vec<Task>)> {
    use Verb::*;
    vec![
        (
            "Go to goal 1 and check the obstacles on the way",
            vec![Task::new(Goto, "goal 1", true)],
        ),
        (
            "Inspect goal 2 and check for any boxes on your way",
            vec![Task::new(Inspect, "goal 2", true)],
        ),
        ("Inspect goal 2", vec![Task::new(Inspect, "goal 2", false)]),
        (
            "Go to goal 2 while avoiding the obstacles",
            vec![Task::new(Goto, "goal 2", true)],
        ),
        ("Go to goal 1", vec![Task::new(Goto, "goal 1", false)]),
        (
            "Check goal 1, there may be boxes around",
            vec![Task::new(Inspect, "goal 1", true)],
        ),
        (
            "Please go to goal 2, watch for anything on the way",
            vec![Task::new(Goto, "goal 2", true)],
        ),
        (
            "Inspect goal 1 then go to goal 2",
            vec![Task::new(Inspect, "goal 1", false), Task::new(Goto, "goal 2", false)],
        ),
        (
            "Go to goal 2, then inspect goal 1 and check for any obstacles",
            vec![Task::new(Goto, "goal 2", false), Task::new(Inspect, "goal 1", true)],
        ),
        ("Check goal 2", vec![Task::new(Inspect, "goal 2", false)]),
    ]
}

/// Template rule for the commander role: interprets the latest mission
/// command against the goal table in its domain knowledge.
pub fn commander_rule(query: &ReasonerQuery) -> Result<String, String> {
    let Some(text) = query
        .inbox_items()
        .into_iter()
        .rev()
        .find(|(t, _)| t == MISSION_COMMAND)
        .and_then(|(_, v)| v.get("text").and_then(Value::as_str).map(str::to_string))
    else {
        return Ok(NOOP.to_string());
    };
    let table = GoalTable::from_knowledge(&query.knowledge()).map_err(|e| e.to_string())?;
    match interpret(&text, &table) {
        Ok(g) => Ok(g.to_payload().to_string()),
        Err(_) => Ok(NOOP.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> GoalTable {
        GoalTable::new()
            .with("goal 1", [8.25, 4.75, 1.0])
            .with("goal 2", [8.25, 1.25, 1.0])
    }

    #[test]
    fn reference_prompts_interpret() {
        for (prompt, expected) in reference_prompts() {
            let g = interpret(prompt, &table()).unwrap();
            assert_eq!(g.tasks, expected, "{prompt}");
            assert_eq!(g.retry_budget, 3);
        }
    }

    #[test]
    fn rejects() {
        assert!(matches!(
            interpret("flurble the wug", &table()),
            Err(InterpretError::Unparseable(_))
        ));
        assert!(matches!(
            interpret("go to goal 7", &table()),
            Err(InterpretError::Unparseable(_))
        ));
        assert_eq!(interpret("  ", &table()), Err(InterpretError::Empty));
        assert!(interpret("goal 1", &table()).is_err());
    }

    #[test]
    fn goal_names_need_word_boundaries() {
        let t = table().with("goal 10", [1.0, 1.0, 1.0]);
        assert_eq!(interpret("go to goal 10", &t).unwrap().tasks[0].goal, "goal 10");
        assert_eq!(interpret("go to goal 1", &t).unwrap().tasks[0].goal, "goal 1");
    }

    #[test]
    fn table_knowledge_round_trip() {
        let t = table();
        assert_eq!(GoalTable::from_knowledge(&t.to_knowledge()).unwrap(), t);
        let dup = vec!["location a: 1, 2, 3".to_string(), "location a: 1, 2, 3".to_string()];
        assert!(GoalTable::from_knowledge(&dup).is_err());
        assert!(GoalTable::from_knowledge(&["location a: 1, 2".to_string()]).is_err());
    }
}
