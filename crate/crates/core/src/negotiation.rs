//! Two-agent trajectory deconfliction: intent exchange, closest-approach
//! prediction, a symmetric yield rule and yield-side replanning.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::Constitution;
use crate::bus::as_point;
use crate::planner::{astar, corners, corridor_distance, GridMap};

pub const DEFAULT_THRESHOLD: f64 = 0.2;
pub const DEFAULT_RADIUS: f64 = 0.4;
pub const SAMPLE_DT: f64 = 0.1;
pub const HOLD_STEP: f64 = 0.5;
pub const MAX_HOLD: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NegotiationError {
    #[error("trajectory is empty")]
    Empty,
    #[error("trajectory times must strictly increase (index {0})")]
    NonIncreasing(usize),
    #[error("sampling step must be positive")]
    BadDt,
    #[error("equal priority keys `{0}`")]
    EqualPriority(String),
    #[error("radius must be positive")]
    BadRadius,
    #[error("malformed intent: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub t: f64,
    pub p: [f64; 3],
}

/// Timed waypoints, linearly interpolated and held beyond either end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory(Vec<TimedPoint>);

impl Trajectory {
    pub fn new(points: Vec<TimedPoint>) -> Result<Self, NegotiationError> {
        if points.is_empty() {
            return Err(NegotiationError::Empty);
        }
        for i in 1..points.len() {
            if !(points[i].t > points[i - 1].t) {
                return Err(NegotiationError::NonIncreasing(i));
            }
        }
        Ok(Self(points))
    }

    /// Constant-speed traversal of `waypoints` starting at `t0`.
    pub fn constant_speed(waypoints: &[[f64; 3]], t0: f64, speed: f64) -> Result<Self, NegotiationError> {
        let mut pts: Vec<TimedPoint> = Vec::new();
        for w in waypoints {
            let t = match pts.last() {
                None => t0,
                Some(last) => {
                    let d = dist(last.p, *w);
                    if d == 0.0 {
                        continue;
                    }
                    last.t + d / speed
                }
            };
            pts.push(TimedPoint { t, p: *w });
        }
        Self::new(pts)
    }

    pub fn points(&self) -> &[TimedPoint] {
        &self.0
    }

    pub fn start_time(&self) -> f64 {
        self.0[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.0[self.0.len() - 1].t
    }

    pub fn goal(&self) -> [f64; 3] {
        self.0[self.0.len() - 1].p
    }

    pub fn sample(&self, t: f64) -> [f64; 3] {
        let pts = &self.0;
        if t <= pts[0].t {
            return pts[0].p;
        }
        let i = pts.partition_point(|q| q.t <= t);
        if i >= pts.len() {
            return pts[pts.len() - 1].p;
        }
        let (a, b) = (pts[i - 1], pts[i]);
        let s = (t - a.t) / (b.t - a.t);
        [0, 1, 2].map(|k| a.p[k] + s * (b.p[k] - a.p[k]))
    }

    /// Reference velocity at `t` (zero outside the timed span).
    pub fn velocity(&self, t: f64) -> [f64; 3] {
        let pts = &self.0;
        if t < pts[0].t || t >= pts[pts.len() - 1].t {
            return [0.0; 3];
        }
        let i = pts.partition_point(|q| q.t <= t);
        let (a, b) = (pts[i - 1], pts[i]);
        [0, 1, 2].map(|k| (b.p[k] - a.p[k]) / (b.t - a.t))
    }

    /// Keeps the part before `t0`, waits at the `t0` position for `hold`
    /// seconds, then continues the remainder shifted by `hold`.
    pub fn with_hold(&self, t0: f64, hold: f64) -> Self {
        let here = self.sample(t0);
        let mut pts: Vec<TimedPoint> = self.0.iter().copied().filter(|q| q.t < t0).collect();
        pts.push(TimedPoint { t: t0, p: here });
        if hold > 0.0 {
            pts.push(TimedPoint { t: t0 + hold, p: here });
        }
        pts.extend(
            self.0
                .iter()
                .filter(|q| q.t > t0)
                .map(|q| TimedPoint { t: q.t + hold, p: q.p }),
        );
        Self(pts)
    }

    /// Stationary at the `t0` position from `t0` onward.
    pub fn hold_from(&self, t0: f64) -> Self {
        let here = self.sample(t0);
        let mut pts: Vec<TimedPoint> = self.0.iter().copied().filter(|q| q.t < t0).collect();
        pts.push(TimedPoint { t: t0, p: here });
        Self(pts)
    }

    /// Mean speed over the part after `t0`.
    pub fn speed_after(&self, t0: f64) -> f64 {
        let mut pts = vec![self.sample(t0)];
        pts.extend(self.0.iter().filter(|q| q.t > t0).map(|q| q.p));
        let len: f64 = pts.windows(2).map(|w| dist(w[0], w[1])).sum();
        let span = self.end_time() - t0;
        if span > 0.0 && len > 0.0 {
            len / span
        } else {
            0.5
        }
    }

    pub fn to_value(&self) -> Value {
        Value::Array(
            self.0
                .iter()
                .map(|q| json!({"t": q.t, "x": q.p[0], "y": q.p[1], "z": q.p[2]}))
                .collect(),
        )
    }

    pub fn from_value(v: &Value) -> Result<Self, NegotiationError> {
        let arr = v
            .as_array()
            .ok_or_else(|| NegotiationError::Malformed("trajectory".into()))?;
        let pts = arr
            .iter()
            .map(|e| {
                let t = e.get("t").and_then(Value::as_f64);
                match (t, as_point(e)) {
                    (Some(t), Some(p)) => Ok(TimedPoint { t, p }),
                    _ => Err(NegotiationError::Malformed("timed waypoint".into())),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(pts)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentMsg {
    pub agent_id: String,
    pub trajectory: Trajectory,
    pub radius: f64,
    pub priority: String,
}

impl IntentMsg {
    pub fn new(agent_id: &str, trajectory: Trajectory, radius: f64) -> Result<Self, NegotiationError> {
        if !(radius > 0.0) {
            return Err(NegotiationError::BadRadius);
        }
        Ok(Self {
            agent_id: agent_id.into(),
            trajectory,
            radius,
            priority: agent_id.into(),
        })
    }

    pub fn to_payload(&self) -> Value {
        json!({
            "agent_id": self.agent_id,
            "trajectory": self.trajectory.to_value(),
            "radius": self.radius,
            "priority": self.priority,
        })
    }

    pub fn from_payload(v: &Value) -> Result<Self, NegotiationError> {
        let s = |k: &str| {
            v.get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| NegotiationError::Malformed(k.into()))
        };
        let radius = v
            .get("radius")
            .and_then(Value::as_f64)
            .ok_or_else(|| NegotiationError::Malformed("radius".into()))?;
        let mut m = Self::new(&s("agent_id")?, Trajectory::from_value(&v["trajectory"])?, radius)?;
        m.priority = s("priority")?;
        Ok(m)
    }
}

/// Bounding radius from "bounding radius" domain knowledge.
pub fn radius_from_constitution(c: &Constitution) -> f64 {
    c.knowledge_value("bounding radius")
        .filter(|r| *r > 0.0)
        .unwrap_or(DEFAULT_RADIUS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub t_star: f64,
    pub d_star: f64,
    pub conflicting: bool,
}

/// Minimum surface distance sampled on `t0, t0+dt, …` up to `horizon`.
pub fn predict_between(
    a: &Trajectory,
    b: &Trajectory,
    ra: f64,
    rb: f64,
    t0: f64,
    horizon: f64,
    dt: f64,
) -> Result<(f64, f64), NegotiationError> {
    if !(dt > 0.0) {
        return Err(NegotiationError::BadDt);
    }
    let n = ((horizon - t0) / dt + 1e-9).floor().max(0.0) as usize;
    let mut best = (t0, f64::INFINITY);
    for k in 0..=n {
        let t = t0 + k as f64 * dt;
        let d = dist(a.sample(t), b.sample(t)) - (ra + rb);
        if d < best.1 {
            best = (t, d);
        }
    }
    Ok(best)
}

/// `(t_star, d_star)` over `[0, horizon]`.
pub fn predict_min_distance(
    a: &Trajectory,
    b: &Trajectory,
    ra: f64,
    rb: f64,
    horizon: f64,
    dt: f64,
) -> Result<(f64, f64), NegotiationError> {
    predict_between(a, b, ra, rb, 0.0, horizon, dt)
}

pub fn detect_conflict(d_star: f64, threshold: f64) -> bool {
    d_star < threshold
}

pub fn report(a: &IntentMsg, b: &IntentMsg, t0: f64, threshold: f64) -> Result<ConflictReport, NegotiationError> {
    let horizon = a.trajectory.end_time().max(b.trajectory.end_time());
    let (t_star, d_star) = predict_between(&a.trajectory, &b.trajectory, a.radius, b.radius, t0, horizon, SAMPLE_DT)?;
    Ok(ConflictReport {
        t_star,
        d_star,
        conflicting: detect_conflict(d_star, threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Yield,
    Proceed,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Yield => "yield",
            Role::Proceed => "proceed",
        }
    }
}

/// The smaller priority key yields.
pub fn negotiate(own: &IntentMsg, other: &IntentMsg) -> Result<Role, NegotiationError> {
    match own.priority.cmp(&other.priority) {
        Ordering::Less => Ok(Role::Yield),
        Ordering::Greater => Ok(Role::Proceed),
        Ordering::Equal => Err(NegotiationError::EqualPriority(own.priority.clone())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplanKind {
    Temporal { hold: f64 },
    Spatial,
    AbortHold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replan {
    pub trajectory: Trajectory,
    pub kind: ReplanKind,
    pub d_star: f64,
}

/// Map with the other's swept corridor blocked.
fn corridor_map(map: &GridMap, other: &Trajectory, margin: f64) -> GridMap {
    let line: Vec<[f64; 3]> = other.points().iter().map(|q| q.p).collect();
    let mut out = map.clone();
    for c in map.cells() {
        if corridor_distance(map.cell_center(c), &line) < margin {
            out.set(c, true);
        }
    }
    out
}

/// Yield-side replanning from time `t0`: temporal holds first, then an A*
/// detour around the other's corridor, else abort-to-hold.
pub fn replan_yield(
    own: &IntentMsg,
    other: &IntentMsg,
    map: Option<&GridMap>,
    t0: f64,
    threshold: f64,
) -> Result<Replan, NegotiationError> {
    let check = |traj: &Trajectory| -> Result<f64, NegotiationError> {
        let horizon = traj.end_time().max(other.trajectory.end_time());
        Ok(predict_between(
            traj,
            &other.trajectory,
            own.radius,
            other.radius,
            t0,
            horizon,
            SAMPLE_DT,
        )?
        .1)
    };
    let steps = (MAX_HOLD / HOLD_STEP).round() as usize;
    for k in 1..=steps {
        let hold = k as f64 * HOLD_STEP;
        let traj = own.trajectory.with_hold(t0, hold);
        let d = check(&traj)?;
        if d >= threshold {
            return Ok(Replan {
                trajectory: traj,
                kind: ReplanKind::Temporal { hold },
                d_star: d,
            });
        }
    }
    if let Some(map) = map {
        let margin = own.radius + other.radius + threshold;
        let blocked = corridor_map(map, &other.trajectory, margin);
        let here = own.trajectory.sample(t0);
        let goal = own.trajectory.goal();
        if let (Some(s), Some(g)) = (map.cell_of([here[0], here[1]]), map.cell_of([goal[0], goal[1]])) {
            let mut grid = blocked;
            grid.set(s, map.is_occupied(s));
            grid.set(g, map.is_occupied(g));
            if let Ok(path) = astar(&grid, s, g, 0, None) {
                let mut wps = vec![here];
                for c in corners(&path.cells).into_iter().skip(1) {
                    let p = map.cell_center(c);
                    wps.push([p[0], p[1], here[2]]);
                }
                wps.pop();
                wps.push(goal);
                let speed = own.trajectory.speed_after(t0);
                let head = own.trajectory.hold_from(t0);
                let tail = Trajectory::constant_speed(&wps, t0, speed)?;
                let mut pts: Vec<TimedPoint> = head.points()[..head.points().len() - 1].to_vec();
                pts.extend_from_slice(tail.points());
                let traj = Trajectory::new(pts)?;
                let d = check(&traj)?;
                if d >= threshold {
                    return Ok(Replan {
                        trajectory: traj,
                        kind: ReplanKind::Spatial,
                        d_star: d,
                    });
                }
            }
        }
    }
    let traj = own.trajectory.hold_from(t0);
    let d = check(&traj)?;
    Ok(Replan {
        trajectory: traj,
        kind: ReplanKind::AbortHold,
        d_star: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(a: [f64; 3], b: [f64; 3], t1: f64) -> Trajectory {
        Trajectory::new(vec![TimedPoint { t: 0.0, p: a }, TimedPoint { t: t1, p: b }]).unwrap()
    }

    fn intent(id: &str, t: Trajectory) -> IntentMsg {
        IntentMsg::new(id, t, 0.4).unwrap()
    }

    #[test]
    fn parallel_and_head_on() {
        let a = line([0.0, 0.0, 0.0], [10.0, 0.0, 0.0], 10.0);
        let b = line([0.0, 5.0, 0.0], [10.0, 5.0, 0.0], 10.0);
        let (_, d) = predict_min_distance(&a, &b, 0.5, 0.5, 10.0, 0.1).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
        let c = line([6.0, 0.0, 0.0], [0.0, 0.0, 0.0], 6.0);
        let e = line([0.0, 0.0, 0.0], [6.0, 0.0, 0.0], 6.0);
        let (t, d) = predict_min_distance(&c, &e, 0.5, 0.5, 6.0, 0.1).unwrap();
        assert!((t - 3.0).abs() < 1e-9);
        assert!((d + 1.0).abs() < 1e-9);
    }

    #[test]
    fn strict_threshold() {
        assert!(detect_conflict(0.19, 0.2));
        assert!(!detect_conflict(0.2, 0.2));
    }

    #[test]
    fn symmetric_roles() {
        let t = line([0.0; 3], [1.0, 0.0, 0.0], 1.0);
        let (a, b) = (intent("A", t.clone()), intent("B", t.clone()));
        assert_eq!(negotiate(&a, &b).unwrap(), Role::Yield);
        assert_eq!(negotiate(&b, &a).unwrap(), Role::Proceed);
        assert!(matches!(
            negotiate(&a, &a.clone()),
            Err(NegotiationError::EqualPriority(_))
        ));
    }

    #[test]
    fn crossing_resolved_by_hold() {
        let a = intent("A", line([-5.0, 0.0, 1.0], [5.0, 0.0, 1.0], 20.0));
        let b = intent("B", line([0.0, -5.0, 1.0], [0.0, 5.0, 1.0], 20.0));
        assert!(report(&a, &b, 0.0, 0.2).unwrap().conflicting);
        let r = replan_yield(&a, &b, None, 0.0, 0.2).unwrap();
        assert!(matches!(r.kind, ReplanKind::Temporal { .. }));
        let fixed = IntentMsg {
            trajectory: r.trajectory.clone(),
            ..a.clone()
        };
        assert!(report(&fixed, &b, 0.0, 0.2).unwrap().d_star >= 0.2 - 1e-9);
        assert_eq!(r.trajectory.goal(), a.trajectory.goal());
    }

    #[test]
    fn blocked_map_aborts() {
        let a = intent("A", line([6.0, 0.0, 1.0], [-6.0, 0.0, 1.0], 24.0));
        let b = intent("B", line([-6.0, 0.0, 1.0], [6.0, 0.0, 1.0], 24.0));
        let mut m = GridMap::new(4, 4, 1.0).unwrap();
        for c in m.cells().collect::<Vec<_>>() {
            m.set(c, true);
        }
        let r = replan_yield(&a, &b, Some(&m), 0.0, 0.2).unwrap();
        assert_eq!(r.kind, ReplanKind::AbortHold);
    }

    #[test]
    fn intent_payload_round_trip() {
        let a = intent("A", line([0.0; 3], [1.0, 2.0, 3.0], 4.0));
        assert_eq!(IntentMsg::from_payload(&a.to_payload()).unwrap(), a);
        assert!(Trajectory::new(vec![]).is_err());
        assert!(IntentMsg::new("x", line([0.0; 3], [1.0; 3], 1.0), 0.0).is_err());
    }

    #[test]
    fn radius_from_knowledge() {
        let c = Constitution::new("x", "intent").knowledge("bounding radius: 0.35 m");
        assert_eq!(radius_from_constitution(&c), 0.35);
        assert_eq!(
            radius_from_constitution(&Constitution::new("x", "intent")),
            DEFAULT_RADIUS
        );
    }
}
