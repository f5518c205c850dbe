//! Pluggable reasoner backends.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Input to one inference call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerQuery {
    pub system_text: String,
    pub context: Vec<String>,
    pub user_content: String,
}

impl ReasonerQuery {
    /// `(topic, payload)` pairs recovered from inbox-rendered user content.
    /// Lines that do not follow the `<topic> <json>` layout are skipped.
    pub fn inbox_items(&self) -> Vec<(String, Value)> {
        self.user_content
            .lines()
            .filter_map(|line| {
                let (topic, json) = line.split_once(' ')?;
                Some((topic.to_string(), serde_json::from_str(json).ok()?))
            })
            .collect()
    }

    /// Constraint clauses from the rendered system text.
    pub fn constraint_clauses(&self) -> Vec<String> {
        section_items(&self.system_text, "CONSTRAINTS:")
    }

    /// Domain-knowledge facts from the rendered system text.
    pub fn knowledge(&self) -> Vec<String> {
        section_items(&self.system_text, "DOMAIN KNOWLEDGE:")
    }
}

fn section_items(text: &str, header: &str) -> Vec<String> {
    text.lines()
        .skip_while(|l| *l != header)
        .skip(1)
        .take_while(|l| l.starts_with("- "))
        .map(|l| l[2..].to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerReply {
    pub content: String,
    pub structured: Option<Value>,
}

impl ReasonerReply {
    pub fn text(content: impl Into<String>) -> Self {
        let content = content.into();
        let structured = serde_json::from_str(&content).ok();
        Self { content, structured }
    }

    pub fn noop() -> Self {
        Self::text(NOOP)
    }

    pub fn is_noop(&self) -> bool {
        self.content.trim() == NOOP
    }
}

pub const NOOP: &str = "NOOP";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendFault {
    #[error("remote backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("remote backend http error: {0}")]
    Http(String),
    #[error("remote backend response malformed: {0}")]
    BadResponse(String),
    #[error("playback transcript exhausted after {0} replies")]
    PlaybackExhausted(usize),
    #[error("no template rule for role `{0}`")]
    NoRule(String),
    #[error("template rule failed: {0}")]
    Rule(String),
}

pub trait Reasoner: Send {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerReply, BackendFault>;

    /// Drops any conversational state. Called when an agent is re-tuned.
    fn reset(&mut self) {}

    fn kind(&self) -> &'static str;
}

/// Deterministic response rule for one agent role.
pub trait TemplateRule: Send {
    fn respond(&self, query: &ReasonerQuery) -> Result<String, String>;
}

impl<F> TemplateRule for F
where
    F: Fn(&ReasonerQuery) -> Result<String, String> + Send,
{
    fn respond(&self, query: &ReasonerQuery) -> Result<String, String> {
        self(query)
    }
}

/// Rule-engine backend: the same query always yields the same reply.
pub struct TemplateBackend {
    role: String,
    rule: Option<Box<dyn TemplateRule>>,
}

impl TemplateBackend {
    pub fn new(role: &str, rule: Box<dyn TemplateRule>) -> Self {
        Self {
            role: role.to_string(),
            rule: Some(rule),
        }
    }

    /// Backend with the built-in rule for `role`. Unknown roles fault on use.
    pub fn standard(role: &str) -> Self {
        Self {
            role: role.to_string(),
            rule: super::rules::standard_rule(role),
        }
    }

    pub fn role(&self) -> &str {
        &self.role
    }
}

impl Reasoner for TemplateBackend {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerReply, BackendFault> {
        let rule = self
            .rule
            .as_ref()
            .ok_or_else(|| BackendFault::NoRule(self.role.clone()))?;
        rule.respond(query).map(ReasonerReply::text).map_err(BackendFault::Rule)
    }

    fn kind(&self) -> &'static str {
        "template"
    }
}

/// Replays a recorded transcript, one reply per call.
#[derive(Debug, Clone)]
pub struct PlaybackBackend {
    replies: VecDeque<String>,
    served: usize,
}

impl PlaybackBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            served: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

impl Reasoner for PlaybackBackend {
    fn infer(&mut self, _query: &ReasonerQuery) -> Result<ReasonerReply, BackendFault> {
        let next = self
            .replies
            .pop_front()
            .ok_or(BackendFault::PlaybackExhausted(self.served))?;
        self.served += 1;
        Ok(ReasonerReply::text(next))
    }

    fn kind(&self) -> &'static str {
        "playback"
    }
}
