//! The safety parser: the last gate between a reasoner reply and the bus.
//!
//! A reply passes only if it parses as a single JSON object, conforms to the
//! output schema, and every kinematic field respects the operational limits.
//! Each block is labelled with exactly one [`ViolationKind`].

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bus::{as_point, FieldKind, Kinematic, TopicSchema};

/// Axis-aligned box, closed on all faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    pub max_speed: f64,
    pub max_depth: f64,
    pub workspace: Workspace,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid safety limits: {0}")]
pub struct LimitsError(pub String);

impl SafetyLimits {
    pub fn new(max_speed: f64, max_depth: f64, workspace: Workspace) -> Result<Self, LimitsError> {
        let finite = max_speed.is_finite()
            && max_depth.is_finite()
            && workspace.min.iter().chain(workspace.max.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(LimitsError("bounds must be finite".into()));
        }
        if max_speed <= 0.0 || max_depth <= 0.0 {
            return Err(LimitsError("max_speed and max_depth must be positive".into()));
        }
        if (0..3).any(|i| workspace.min[i] > workspace.max[i]) {
            return Err(LimitsError("workspace min exceeds max".into()));
        }
        Ok(Self {
            max_speed,
            max_depth,
            workspace,
        })
    }

    /// Box `[0, sx] × [0, sy] × [0, max_depth]`.
    pub fn tank(sx: f64, sy: f64, max_depth: f64, max_speed: f64) -> Self {
        Self::new(
            max_speed,
            max_depth,
            Workspace {
                min: [0.0, 0.0, 0.0],
                max: [sx, sy, max_depth],
            },
        )
        .expect("tank limits are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Syntax,
    Schema,
    Limit,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Syntax => "syntax",
            ViolationKind::Schema => "schema",
            ViolationKind::Limit => "limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} violation: {detail}", kind.as_str())]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses and validates raw reply text. Returns the accepted payload.
pub fn validate_reply(text: &str, schema: &TopicSchema, limits: &SafetyLimits) -> Result<Value, Violation> {
    let body = strip_fences(text);
    let payload: Value = serde_json::from_str(body).map_err(|e| {
        Violation::new(
            ViolationKind::Syntax,
            format!("line {} column {}: {}", e.line(), e.column(), e),
        )
    })?;
    validate(&payload, schema, limits)?;
    Ok(payload)
}

/// Schema and limit checks on an already-parsed payload.
pub fn validate(payload: &Value, schema: &TopicSchema, limits: &SafetyLimits) -> Result<(), Violation> {
    schema
        .validate(payload)
        .map_err(|v| Violation::new(ViolationKind::Schema, v.to_string()))?;
    for spec in &schema.fields {
        let (Some(role), Some(v)) = (spec.kinematic, payload.get(&spec.name)) else {
            continue;
        };
        if v.is_null() {
            continue;
        }
        let ok = match role {
            Kinematic::Speed => match spec.kind {
                FieldKind::NumberList => {
                    let n2: f64 = v
                        .as_array()
                        .map(|a| a.iter().filter_map(Value::as_f64).map(|x| x * x).sum())
                        .unwrap_or(f64::INFINITY);
                    n2.sqrt() <= limits.max_speed
                }
                _ => v.as_f64().is_some_and(|s| s.abs() <= limits.max_speed),
            },
            Kinematic::Depth => v.as_f64().is_some_and(|d| (0.0..=limits.max_depth).contains(&d)),
            Kinematic::Position => as_point(v).is_some_and(|p| point_ok(p, limits)),
            Kinematic::Waypoints => v
                .as_array()
                .is_some_and(|pts| pts.iter().all(|p| as_point(p).is_some_and(|p| point_ok(p, limits)))),
        };
        if !ok {
            return Err(Violation::new(ViolationKind::Limit, spec.name.clone()));
        }
    }
    Ok(())
}

fn point_ok(p: [f64; 3], limits: &SafetyLimits) -> bool {
    limits.workspace.contains(p) && p[2] >= 0.0 && p[2] <= limits.max_depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topics::standard_registry;

    fn limits() -> SafetyLimits {
        SafetyLimits::tank(10.0, 10.0, 5.0, 1.0)
    }

    #[test]
    fn over_speed_is_a_limit_violation() {
        let reg = standard_registry();
        let s = reg.schema("velocity_cmd").unwrap();
        let v = validate_reply(r#"{"speed": 2.0, "heading": 0.0, "depth": 1.0}"#, s, &limits()).unwrap_err();
        assert_eq!(v, Violation::new(ViolationKind::Limit, "speed"));
        assert!(validate_reply(r#"{"speed": 1.0, "heading": 0.0, "depth": 1.0}"#, s, &limits()).is_ok());
        let v = validate_reply(r#"{"speed": 0.5, "heading": 0.0, "depth": 5.5}"#, s, &limits()).unwrap_err();
        assert_eq!(v.detail, "depth");
    }

    #[test]
    fn malformed_text_reports_position() {
        let reg = standard_registry();
        let s = reg.schema("velocity_cmd").unwrap();
        let v = validate_reply("{\"speed\": 0.5,\n  \"heading\" 0.1}", s, &limits()).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Syntax);
        assert!(v.detail.starts_with("line 2 column"), "{}", v.detail);
    }

    #[test]
    fn workspace_boundary_is_inclusive() {
        let reg = standard_registry();
        let s = reg.schema("waypoint_list").unwrap();
        let on_edge = r#"{"waypoints": [{"x": 10.0, "y": 0.0, "z": 5.0}], "speed": 0.5}"#;
        assert!(validate_reply(on_edge, s, &limits()).is_ok());
        let outside = r#"{"waypoints": [{"x": 10.01, "y": 0.0, "z": 1.0}], "speed": 0.5}"#;
        assert_eq!(
            validate_reply(outside, s, &limits()).unwrap_err().kind,
            ViolationKind::Limit
        );
    }

    #[test]
    fn schema_failures_are_schema_kind() {
        let reg = standard_registry();
        let s = reg.schema("waypoint_list").unwrap();
        let v = validate_reply(r#"{"speed": 0.5}"#, s, &limits()).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Schema);
        let v = validate_reply("[1,2,3]", s, &limits()).unwrap_err();
        assert_eq!(v.kind, ViolationKind::Schema);
    }

    #[test]
    fn fenced_json_is_accepted() {
        let reg = standard_registry();
        let s = reg.schema("velocity_cmd").unwrap();
        let text = "```json\n{\"speed\": 0.2, \"heading\": 0.0, \"depth\": 1.0}\n```";
        assert!(validate_reply(text, s, &limits()).is_ok());
    }

    #[test]
    fn limits_must_be_sane() {
        let ws = Workspace {
            min: [0.0; 3],
            max: [1.0; 3],
        };
        assert!(SafetyLimits::new(0.0, 1.0, ws).is_err());
        assert!(SafetyLimits::new(1.0, f64::NAN, ws).is_err());
        assert!(SafetyLimits::new(1.0, 1.0, ws).is_ok());
    }
}
