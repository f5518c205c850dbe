//! Teacher-student tuning: a student describes a scene, a teacher scores
//! the description and tightens the student's constitution.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{Agent, AgentError, AgentSpec, Constitution, ReasonerBinding, ReasonerQuery, SafetyLimits};
use crate::bus::{Bus, Envelope};
use crate::sim::Detection;
use crate::topics::{self, DETECTIONS};

/// Word budget above which the teacher asks for a single sentence.
pub const WORD_LIMIT: usize = 12;
const BEARING_TOL: f64 = 0.01;
const RANGE_TOL: f64 = 0.05;

pub const CLAUSE_ONE_SENTENCE: &str = "respond in one sentence";
pub const CLAUSE_BEARING_RANGE: &str = "include bearing and range";

pub fn clause_report_only(class: &str) -> String {
    format!("report only {class}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub class: String,
}

impl TargetSpec {
    pub fn new(class: &str) -> Option<Self> {
        let class = class.trim();
        (!class.is_empty()).then(|| Self {
            class: class.to_lowercase(),
        })
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text, and on
/// newlines. Empty pieces are dropped.
pub fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '\n' {
            out.push(std::mem::take(&mut cur));
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            out.push(std::mem::take(&mut cur));
        }
    }
    out.push(cur);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn number_after(tokens: &[&str], key: &str) -> Option<f64> {
    let i = tokens
        .iter()
        .position(|t| t.trim_matches(|c: char| !c.is_alphanumeric()) == key)?;
    tokens[i + 1..].iter().take(4).find_map(|t| {
        t.trim_end_matches([',', ';', ':'])
            .trim_end_matches('.')
            .parse::<f64>()
            .ok()
    })
}

fn claims_absent(lower: &str, class: &str) -> bool {
    lower.contains("not present") || lower.contains(&format!("no {class}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub words: usize,
    pub relevance: f64,
    pub presence_ok: bool,
    pub location_ok: bool,
    pub on_target: usize,
    pub sentences: usize,
}

/// Relevance = 100 · (correct required fields / 2) · (on-target / total
/// sentences). `truth` is the target's ground-truth detection, if present.
pub fn score(response: &str, target: &TargetSpec, truth: Option<&Detection>) -> Score {
    let lower = response.to_lowercase();
    let class = target.class.as_str();
    let sents = sentences(&lower);
    let on_target = sents.iter().filter(|s| s.contains(class)).count();
    let mentions = on_target > 0;
    let presence_ok = match truth {
        Some(_) => mentions && !claims_absent(&lower, class),
        None => mentions && claims_absent(&lower, class),
    };
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let bearing = number_after(&tokens, "bearing");
    let range = number_after(&tokens, "range");
    let location_ok = match truth {
        Some(d) => matches!((bearing, range), (Some(b), Some(r))
            if (b - d.bearing).abs() <= BEARING_TOL && (r - d.range).abs() <= RANGE_TOL),
        None => presence_ok && bearing.is_none() && range.is_none(),
    };
    let fields = presence_ok as u8 + location_ok as u8;
    let relevance = if sents.is_empty() {
        0.0
    } else {
        100.0 * (fields as f64 / 2.0) * (on_target as f64 / sents.len() as f64)
    };
    Score {
        words: word_count(response),
        relevance,
        presence_ok,
        location_ok,
        on_target,
        sentences: sents.len(),
    }
}

fn side(bearing: f64) -> &'static str {
    if bearing > 0.15 {
        "to the left"
    } else if bearing < -0.15 {
        "to the right"
    } else {
        "straight ahead"
    }
}

fn distance_word(range: f64) -> &'static str {
    if range < 2.0 {
        "close by"
    } else if range < 5.0 {
        "a few metres away"
    } else {
        "far away"
    }
}

/// Constraint state read from constitution clauses.
#[derive(Debug, Clone, Default, PartialEq)]
struct Style {
    only: Option<String>,
    numeric: bool,
    terse: bool,
}

impl Style {
    fn from_clauses(clauses: &[String]) -> Self {
        let mut s = Style::default();
        for c in clauses {
            let c = c.trim().to_lowercase();
            if let Some(class) = c.strip_prefix("report only ") {
                s.only = Some(class.trim().to_string());
            } else if c == CLAUSE_BEARING_RANGE {
                s.numeric = true;
            } else if c == CLAUSE_ONE_SENTENCE {
                s.terse = true;
            }
        }
        s
    }
}

fn describe(d: &Detection, style: &Style) -> String {
    match (style.terse, style.numeric) {
        (true, _) => format!("{}: bearing {:.2} rad, range {:.1} m", d.class, d.bearing, d.range),
        (false, true) => format!(
            "The {} is at a bearing of {:.2} rad and a range of {:.1} m.",
            d.class, d.bearing, d.range
        ),
        (false, false) => format!(
            "There is a {} {}, {}.",
            d.class,
            side(d.bearing),
            distance_word(d.range)
        ),
    }
}

/// Renders detections under the constraints in `clauses`.
pub fn render_description(detections: &[Detection], clauses: &[String]) -> String {
    let style = Style::from_clauses(clauses);
    match &style.only {
        Some(class) => {
            let nearest = detections
                .iter()
                .filter(|d| d.class == *class)
                .min_by(|a, b| a.range.total_cmp(&b.range));
            match nearest {
                Some(d) if style.terse => describe(d, &style),
                Some(d) if style.numeric => describe(d, &style),
                Some(d) => format!(
                    "A {} is visible in the scene, positioned {} of the vehicle and {} from the camera.",
                    d.class,
                    side(d.bearing),
                    distance_word(d.range)
                ),
                None if style.terse => format!("{class}: not present"),
                None => format!("No {class} is visible."),
            }
        }
        None if style.terse => {
            let names: Vec<&str> = detections.iter().map(|d| d.class.as_str()).collect();
            format!("{} objects: {}", names.len(), names.join(", "))
        }
        None => {
            let mut out = format!(
                "The camera shows a cluttered underwater scene with {} objects in view.",
                detections.len()
            );
            for d in detections {
                out.push(' ');
                out.push_str(&describe(d, &style));
            }
            out
        }
    }
}

fn detections_of(query: &ReasonerQuery) -> Vec<Detection> {
    query
        .inbox_items()
        .into_iter()
        .rfind(|(t, _)| t == DETECTIONS)
        .and_then(|(_, v)| serde_json::from_value(v["items"].clone()).ok())
        .unwrap_or_default()
}

/// Template rule for the student role.
pub fn student_rule(query: &ReasonerQuery) -> Result<String, String> {
    let dets = detections_of(query);
    let text = render_description(&dets, &query.constraint_clauses());
    Ok(json!({ "text": text }).to_string())
}

/// Appends the highest-priority unmet clause; unchanged at the fixed point.
pub fn teacher_feedback(s: &Score, target: &TargetSpec, current: &Constitution) -> Constitution {
    let has = |c: &str| current.constraint_clauses.iter().any(|x| x == c);
    let only = clause_report_only(&target.class);
    let next = if s.on_target < s.sentences && !has(&only) {
        Some(only)
    } else if !s.location_ok && !has(CLAUSE_BEARING_RANGE) {
        Some(CLAUSE_BEARING_RANGE.to_string())
    } else if s.words > WORD_LIMIT && !has(CLAUSE_ONE_SENTENCE) {
        Some(CLAUSE_ONE_SENTENCE.to_string())
    } else {
        None
    };
    match next {
        Some(c) if !(s.relevance >= 100.0 && s.words <= WORD_LIMIT) => current.clone().with_clause(&c),
        _ => current.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u32,
    pub response: String,
    pub word_count: usize,
    pub relevance: f64,
    pub constitution_digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TuningError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("max episodes must be at least 1")]
    ZeroEpisodes,
    #[error("student produced no description in episode {0}")]
    NoReply(u32),
}

pub fn student_constitution() -> Constitution {
    Constitution::new(
        "You are the Student perception agent. Describe what the camera detections show.",
        "scene_report",
    )
    .knowledge("detections arrive as class, bearing (rad, positive left) and range (m)")
    .guideline("mention every detected object")
}

pub fn student_spec(id: &str, binding: ReasonerBinding) -> AgentSpec {
    AgentSpec {
        agent_id: id.into(),
        role: "student".into(),
        constitution: student_constitution(),
        subscriptions: vec![topics::DETECTIONS.into()],
        publications: vec![topics::STUDENT_REPORT.into()],
        reasoner: binding,
        limits: SafetyLimits::tank(10.0, 10.0, 10.0, 1.0),
    }
}

pub fn detections_envelope(detections: &[Detection]) -> Envelope {
    Envelope {
        topic: DETECTIONS.into(),
        schema_id: "detections".into(),
        seq: 0,
        stamp: 0.0,
        publisher_id: "camera".into(),
        payload: json!({ "items": detections }),
    }
}

/// Describe → score → feedback → retune, until the fixed point or
/// `max_episodes`.
pub fn run_tuning(
    bus: &mut Bus,
    spec: AgentSpec,
    detections: &[Detection],
    target: &TargetSpec,
    max_episodes: u32,
) -> Result<Vec<EpisodeRecord>, TuningError> {
    if max_episodes == 0 {
        return Err(TuningError::ZeroEpisodes);
    }
    let truth = detections
        .iter()
        .filter(|d| d.class == target.class)
        .min_by(|a, b| a.range.total_cmp(&b.range))
        .cloned();
    let mut agent = Agent::instantiate(bus, spec)?;
    let inbox = [detections_envelope(detections)];
    let mut records = Vec::new();
    for episode in 1..=max_episodes {
        let out = agent.step(&inbox, None);
        let text = out
            .outbox
            .first()
            .and_then(|m| m.payload.get("text").and_then(Value::as_str))
            .ok_or(TuningError::NoReply(episode))?
            .to_string();
        let s = score(&text, target, truth.as_ref());
        records.push(EpisodeRecord {
            episode,
            response: text,
            word_count: s.words,
            relevance: s.relevance,
            constitution_digest: agent.constitution().digest(),
        });
        let next = teacher_feedback(&s, target, agent.constitution());
        if &next == agent.constitution() {
            break;
        }
        agent = agent.retune(bus.registry(), next)?;
    }
    agent.retire(bus);
    Ok(records)
}

fn det(class: &str, bearing: f64, range: f64) -> Detection {
    Detection {
        class: class.into(),
        bearing,
        range,
        confidence: (1.0 - 0.05 * range).clamp(0.1, 1.0),
    }
}

pub const TARGET_CLASSES: [&str; 4] = ["red ball", "pink buoy", "fishing net", "crate"];

/// The standard cluttered scene: nine detections.
pub fn standard_scene() -> Vec<Detection> {
    vec![
        det("rock", 0.61, 3.4),
        det("red ball", 0.32, 2.1),
        det("seaweed", -0.44, 1.8),
        det("pink buoy", -0.12, 4.6),
        det("pipe", 0.05, 6.2),
        det("fishing net", -0.71, 2.9),
        det("sand ripple", 0.2, 1.2),
        det("crate", 0.48, 5.3),
        det("fish", -0.3, 3.9),
    ]
}

/// Five scenes, each holding every target class among clutter.
pub fn scenes() -> Vec<Vec<Detection>> {
    let mut out = vec![standard_scene()];
    let extra = ["rock", "seaweed", "fish", "tyre", "anchor", "sand ripple"];
    for k in 1..5 {
        let mut s = Vec::new();
        for (i, class) in TARGET_CLASSES.iter().enumerate() {
            let b = ((k * 7 + i * 3) % 13) as f64 / 13.0 * 1.6 - 0.8;
            s.push(det(
                class,
                (b * 100.0).round() / 100.0,
                1.0 + ((k + 2 * i) % 6) as f64 * 0.9,
            ));
        }
        for j in 0..(k + 2) {
            let b = ((k * 5 + j * 4) % 11) as f64 / 11.0 * 1.6 - 0.8;
            s.insert(
                (j * 2) % (s.len() + 1),
                det(extra[(k + j) % extra.len()], b, 1.5 + j as f64 * 0.7),
            );
        }
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub trial: u32,
    pub target_class: String,
    pub episode: u32,
    pub words: usize,
    pub relevance_pct: f64,
    pub constitution_digest: String,
}

pub fn write_csv<W: Write>(rows: &[TuningRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
