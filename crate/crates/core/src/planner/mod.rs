//! Grid maps, A* with clearance and tether pruning, perception noise, the
//! reasoner-driven planner and plan evaluation.

mod astar;
mod map;
mod perception;

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use astar::{astar, neighbors, polyline_length, Path, TetherConstraint};
pub use map::{Cell, GridMap, LoadedMap};
pub use perception::{components, perceive_detailed, perceive_map, ObstacleOutcome, PerceptionParams};

use crate::agent::{first_number, Agent, AgentSpec, Constitution, ReasonerBinding, ReasonerQuery, SafetyLimits, NOOP};
use crate::bus::{as_point, Envelope};
use crate::topics::{PLAN_PATH, PLAN_REQUEST};

/// Final-position tolerance for a successful plan, m.
pub const SUCCESS_RADIUS: f64 = 0.3;
pub const DEFAULT_SPEED: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("map: {0}")]
    Map(String),
    #[error("{0} lies outside the map")]
    OutOfBounds(&'static str),
    #[error("{0} is not free after inflation")]
    Blocked(&'static str),
    #[error("no path")]
    Infeasible,
    #[error("reply rejected: {0}")]
    Rejected(String),
    #[error("reasoner produced no plan")]
    NoReply,
    #[error("plan crosses a perceived obstacle")]
    CrossesObstacle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub avoid: bool,
    pub map: Option<String>,
    pub resolution: Option<f64>,
    pub clearance: Option<usize>,
}

fn point(p: [f64; 3]) -> Value {
    json!({"x": p[0], "y": p[1], "z": p[2]})
}

impl PlanRequest {
    pub fn to_payload(&self) -> Value {
        let mut v = json!({
            "start": point(self.start),
            "goal": point(self.goal),
            "avoid": self.avoid,
        });
        if let Some(m) = &self.map {
            v["map"] = json!(m);
        }
        if let Some(r) = self.resolution {
            v["resolution"] = json!(r);
        }
        if let Some(c) = self.clearance {
            v["clearance"] = json!(c);
        }
        v
    }

    pub fn from_payload(v: &Value) -> Option<Self> {
        Some(Self {
            start: as_point(v.get("start")?)?,
            goal: as_point(v.get("goal")?)?,
            avoid: v.get("avoid")?.as_bool()?,
            map: v.get("map").and_then(Value::as_str).map(str::to_string),
            resolution: v.get("resolution").and_then(Value::as_f64),
            clearance: v.get("clearance").and_then(Value::as_u64).map(|c| c as usize),
        })
    }
}

/// Keeps only the endpoints and the cells where the direction changes.
pub fn corners(cells: &[Cell]) -> Vec<Cell> {
    if cells.len() <= 2 {
        return cells.to_vec();
    }
    let dir = |a: Cell, b: Cell| (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
    let mut out = vec![cells[0]];
    for w in cells.windows(3) {
        if dir(w[0], w[1]) != dir(w[1], w[2]) {
            out.push(w[1]);
        }
    }
    out.push(*cells.last().expect("len > 2"));
    out
}

/// 8-connected cell line from `a` to `b`, both included.
pub fn cell_line(a: Cell, b: Cell) -> Vec<Cell> {
    let (dx, dy) = (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
    let n = dx.abs().max(dy.abs());
    (0..=n)
        .map(|i| {
            let t = if n == 0 { 0.0 } else { i as f64 / n as f64 };
            (
                (a.0 as f64 + t * dx as f64).round() as usize,
                (a.1 as f64 + t * dy as f64).round() as usize,
            )
        })
        .collect()
}

/// Template rule for the planner role.
///
/// A request with `avoid` false, or without a map, is answered with the
/// direct segment from start to goal. Otherwise the map is searched with A*
/// and the path is returned as its corner waypoints.
pub fn template_rule(query: &ReasonerQuery) -> Result<String, String> {
    let Some(req) = query
        .inbox_items()
        .into_iter()
        .rev()
        .find(|(t, _)| t == PLAN_REQUEST)
        .and_then(|(_, v)| PlanRequest::from_payload(&v))
    else {
        return Ok(NOOP.to_string());
    };
    let speed = query
        .knowledge()
        .iter()
        .filter(|k| k.to_lowercase().contains("cruise speed"))
        .find_map(|k| first_number(k))
        .unwrap_or(DEFAULT_SPEED);
    let waypoints = match (&req.map, req.avoid) {
        (Some(text), true) => {
            let map = GridMap::from_ascii(text, req.resolution.unwrap_or(1.0))
                .map_err(|e| e.to_string())?
                .map;
            let clearance = req.clearance.unwrap_or(1);
            let mut s = map.cell_of([req.start[0], req.start[1]]).ok_or("start outside map")?;
            let g = map.cell_of([req.goal[0], req.goal[1]]).ok_or("goal outside map")?;
            // a vehicle stopped inside the margin first steps out to the
            // nearest cell clear of it, as long as that cell is adjacent.
            let inflated = map.inflate(clearance);
            let mut prefix = Vec::new();
            if map.is_free(s) && inflated.is_occupied(s) {
                if let Some(c) = inflated.nearest_free([req.start[0], req.start[1]]) {
                    if c.0.abs_diff(s.0) <= clearance && c.1.abs_diff(s.1) <= clearance {
                        prefix.push(s);
                        s = c;
                    }
                }
            }
            let path = astar(&map, s, g, clearance, None).map_err(|e| e.to_string())?;
            let mut cells = prefix;
            cells.extend(corners(&path.cells));
            cells
                .into_iter()
                .map(|c| {
                    let p = map.cell_center(c);
                    [p[0], p[1], req.start[2]]
                })
                .collect()
        }
        _ => vec![req.start, req.goal],
    };
    Ok(json!({
        "waypoints": waypoints.into_iter().map(point).collect::<Vec<_>>(),
        "speed": speed,
    })
    .to_string())
}

fn request_envelope(req: &PlanRequest, stamp: f64) -> Envelope {
    Envelope {
        topic: PLAN_REQUEST.into(),
        schema_id: "plan_request".into(),
        seq: 0,
        stamp,
        publisher_id: "planner-harness".into(),
        payload: req.to_payload(),
    }
}

/// Waypoints from a `waypoint_list` payload.
pub fn waypoints_of(payload: &Value) -> Vec<[f64; 3]> {
    payload
        .get("waypoints")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(as_point).collect())
        .unwrap_or_default()
}

/// Snaps reasoner waypoints onto free cells and joins them with
/// 8-connected cell lines that must stay free on `map`.
pub fn snap_and_densify(map: &GridMap, waypoints: &[[f64; 3]]) -> Result<Path, PlanError> {
    let depth = waypoints.first().map_or(0.0, |w| w[2]);
    let mut cells: Vec<Cell> = Vec::new();
    for w in waypoints {
        let c = map.nearest_free([w[0], w[1]]).ok_or(PlanError::Infeasible)?;
        match cells.last() {
            None => cells.push(c),
            Some(&last) => {
                for n in cell_line(last, c).into_iter().skip(1) {
                    let prev = *cells.last().expect("nonempty");
                    if map.is_occupied(n) {
                        return Err(PlanError::CrossesObstacle);
                    }
                    if n.0 != prev.0
                        && n.1 != prev.1
                        && (map.is_occupied((n.0, prev.1)) || map.is_occupied((prev.0, n.1)))
                    {
                        return Err(PlanError::CrossesObstacle);
                    }
                    cells.push(n);
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(PlanError::NoReply);
    }
    Ok(Path::from_cells(map, cells, depth))
}

/// Plans through an agent: the perceived map goes out as a plan request,
/// the validated reply is snapped and densified on the perceived map.
pub fn agent_plan(
    agent: &mut Agent,
    perceived: &GridMap,
    start: [f64; 3],
    goal: [f64; 3],
    clearance: usize,
) -> Result<Path, PlanError> {
    let req = PlanRequest {
        start,
        goal,
        avoid: true,
        map: Some(perceived.to_ascii()),
        resolution: Some(perceived.resolution),
        clearance: Some(clearance),
    };
    let out = agent.step(&[request_envelope(&req, 0.0)], None);
    if let Some(ev) = out.events.first() {
        let detail = format!(
            "{}: {}",
            ev.payload["kind"].as_str().unwrap_or("?"),
            ev.payload["detail"].as_str().unwrap_or("")
        );
        return Err(PlanError::Rejected(detail));
    }
    let msg = out.outbox.first().ok_or(PlanError::NoReply)?;
    snap_and_densify(perceived, &waypoints_of(&msg.payload))
}

pub fn planner_constitution(cruise_speed: f64) -> Constitution {
    Constitution::new(
        "You are the motion planning agent. Produce waypoint lists that reach the goal.",
        "waypoint_list",
    )
    .knowledge(&format!("cruise speed: {cruise_speed} m/s"))
    .guideline("plan around perceived obstacles when the request asks for avoidance")
    .guideline("otherwise plan the direct segment from start to goal")
}

pub fn planner_spec(id: &str, binding: ReasonerBinding, limits: SafetyLimits, cruise_speed: f64) -> AgentSpec {
    AgentSpec {
        agent_id: id.into(),
        role: "planner".into(),
        constitution: planner_constitution(cruise_speed),
        subscriptions: vec![PLAN_REQUEST.into()],
        publications: vec![PLAN_PATH.into()],
        reasoner: binding,
        limits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub success: bool,
    pub final_error: f64,
    pub error_delta: f64,
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Distance from `p` to a polyline.
pub fn corridor_distance(p: [f64; 2], line: &[[f64; 3]]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => (p[0] - only[0]).hypot(p[1] - only[1]),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, [w[0][0], w[0][1]], [w[1][0], w[1][1]]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// True if any point swept along the polyline falls in an occupied (or
/// off-map) cell.
pub fn swept_collision(truth: &GridMap, waypoints: &[[f64; 3]]) -> bool {
    let step = truth.resolution / 8.0;
    let occupied = |p: [f64; 2]| truth.cell_of(p).is_none_or(|c| truth.is_occupied(c));
    if let Some(w) = waypoints.first() {
        if occupied([w[0], w[1]]) {
            return true;
        }
    }
    for w in waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            if occupied([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]) {
                return true;
            }
        }
    }
    false
}

fn metric(path: &[[f64; 3]], goal: [f64; 3], baseline: &[[f64; 3]]) -> f64 {
    let last = path.last().expect("nonempty path");
    let final_error = (last[0] - goal[0]).hypot(last[1] - goal[1]);
    let dev = path
        .iter()
        .map(|p| corridor_distance([p[0], p[1]], baseline))
        .sum::<f64>()
        / path.len() as f64;
    final_error + dev
}

/// Scores `path` (or a failure) against the truth map and the baseline.
pub fn evaluate(
    path: Result<&Path, &PlanError>,
    truth: &GridMap,
    start: [f64; 3],
    goal: [f64; 3],
    baseline: &Path,
) -> PlanEvaluation {
    let base = metric(&baseline.waypoints, goal, &baseline.waypoints);
    match path {
        Ok(p) if !p.waypoints.is_empty() => {
            let last = p.waypoints.last().expect("nonempty");
            let final_error = (last[0] - goal[0]).hypot(last[1] - goal[1]);
            PlanEvaluation {
                success: !swept_collision(truth, &p.waypoints) && final_error <= SUCCESS_RADIUS,
                final_error,
                error_delta: metric(&p.waypoints, goal, &baseline.waypoints) - base,
            }
        }
        _ => {
            let final_error = (start[0] - goal[0]).hypot(start[1] - goal[1]);
            PlanEvaluation {
                success: false,
                final_error,
                error_delta: final_error - base,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub map_id: String,
    pub trial: u32,
    pub backend: String,
    pub success: bool,
    pub final_error_m: f64,
    pub error_delta_m: f64,
}

pub fn write_csv<W: Write>(rows: &[EvalRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
