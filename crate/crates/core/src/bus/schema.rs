//! Topic schemas and the registry that binds topics to them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Value shape accepted for a single payload field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Number,
    Integer,
    Bool,
    Text,
    NumberList,
    /// Object with numeric `x`, `y`, `z`.
    Point,
    PointList,
    List,
    Object,
    Any,
}

/// Marks a field as carrying a kinematic quantity that the safety parser
/// checks against operational limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinematic {
    /// Scalar speed, or a velocity vector checked by its Euclidean norm.
    Speed,
    Depth,
    Position,
    Waypoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "enum")]
    pub allowed: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinematic: Option<Kinematic>,
}

fn default_true() -> bool {
    true
}

impl FieldSpec {
    pub fn new(name: &str, kind: FieldKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            required: true,
            range: None,
            allowed: None,
            kinematic: None,
        }
    }

    pub fn optional(mut self) -> Self {
        self.required = false;
        self
    }

    pub fn range(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some((lo, hi));
        self
    }

    pub fn one_of(mut self, values: &[&str]) -> Self {
        self.allowed = Some(values.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn kinematic(mut self, k: Kinematic) -> Self {
        self.kinematic = Some(k);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSchema {
    pub schema_id: String,
    pub fields: Vec<FieldSpec>,
}

/// A field-level schema failure. `field` names the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("field `{field}`: {reason}")]
pub struct SchemaViolation {
    pub field: String,
    pub reason: String,
}

impl SchemaViolation {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("schema `{0}` already registered")]
    DuplicateSchema(String),
    #[error("schema `{schema}` field `{field}` has an empty or inverted range")]
    BadRange { schema: String, field: String },
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("topic `{0}` already bound to a different schema")]
    TopicConflict(String),
}

impl TopicSchema {
    pub fn new(schema_id: &str, fields: Vec<FieldSpec>) -> Self {
        Self {
            schema_id: schema_id.to_string(),
            fields,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Checks shape, ranges and enums. Unknown fields are rejected.
    pub fn validate(&self, payload: &Value) -> Result<(), SchemaViolation> {
        let obj = payload
            .as_object()
            .ok_or_else(|| SchemaViolation::new("<root>", "payload is not an object"))?;
        for spec in &self.fields {
            match obj.get(&spec.name) {
                None | Some(Value::Null) => {
                    if spec.required {
                        return Err(SchemaViolation::new(&spec.name, "missing field"));
                    }
                }
                Some(v) => check_field(spec, v)?,
            }
        }
        if let Some(extra) = obj.keys().find(|k| self.field(k).is_none()) {
            return Err(SchemaViolation::new(extra, "unexpected field"));
        }
        Ok(())
    }
}

fn check_number(spec: &FieldSpec, v: &Value) -> Result<f64, SchemaViolation> {
    let x = v
        .as_f64()
        .ok_or_else(|| SchemaViolation::new(&spec.name, "expected number"))?;
    if !x.is_finite() {
        return Err(SchemaViolation::new(&spec.name, "non-finite number"));
    }
    if let Some((lo, hi)) = spec.range {
        if x < lo || x > hi {
            return Err(SchemaViolation::new(&spec.name, format!("{x} outside [{lo}, {hi}]")));
        }
    }
    Ok(x)
}

pub(crate) fn as_point(v: &Value) -> Option<[f64; 3]> {
    let o = v.as_object()?;
    Some([o.get("x")?.as_f64()?, o.get("y")?.as_f64()?, o.get("z")?.as_f64()?])
}

fn check_point(spec: &FieldSpec, v: &Value) -> Result<(), SchemaViolation> {
    match as_point(v) {
        Some(p) if p.iter().all(|c| c.is_finite()) => {
            if v.as_object().map_or(0, |o| o.len()) != 3 {
                return Err(SchemaViolation::new(&spec.name, "point has extra keys"));
            }
            Ok(())
        }
        _ => Err(SchemaViolation::new(&spec.name, "expected point {x,y,z}")),
    }
}

fn check_field(spec: &FieldSpec, v: &Value) -> Result<(), SchemaViolation> {
    match spec.kind {
        FieldKind::Number => check_number(spec, v).map(|_| ()),
        FieldKind::Integer => {
            if v.as_i64().is_none() && v.as_u64().is_none() {
                return Err(SchemaViolation::new(&spec.name, "expected integer"));
            }
            check_number(spec, v).map(|_| ())
        }
        FieldKind::Bool => v
            .as_bool()
            .map(|_| ())
            .ok_or_else(|| SchemaViolation::new(&spec.name, "expected bool")),
        FieldKind::Text => {
            let s = v
                .as_str()
                .ok_or_else(|| SchemaViolation::new(&spec.name, "expected text"))?;
            if let Some(allowed) = &spec.allowed {
                if !allowed.iter().any(|a| a == s) {
                    return Err(SchemaViolation::new(&spec.name, format!("`{s}` not in enum")));
                }
            }
            Ok(())
        }
        FieldKind::NumberList => {
            let items = v
                .as_array()
                .ok_or_else(|| SchemaViolation::new(&spec.name, "expected list"))?;
            items.iter().try_for_each(|x| check_number(spec, x).map(|_| ()))
        }
        FieldKind::Point => check_point(spec, v),
        FieldKind::PointList => {
            let items = v
                .as_array()
                .ok_or_else(|| SchemaViolation::new(&spec.name, "expected list of points"))?;
            items.iter().try_for_each(|p| check_point(spec, p))
        }
        FieldKind::List => v
            .as_array()
            .map(|_| ())
            .ok_or_else(|| SchemaViolation::new(&spec.name, "expected list")),
        FieldKind::Object => v
            .as_object()
            .map(|_| ())
            .ok_or_else(|| SchemaViolation::new(&spec.name, "expected object")),
        FieldKind::Any => Ok(()),
    }
}

/// Schemas by id plus the topic → schema binding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaRegistry {
    schemas: BTreeMap<String, TopicSchema>,
    topics: BTreeMap<String, String>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_schema(&mut self, schema: TopicSchema) -> Result<(), RegistryError> {
        if self.schemas.contains_key(&schema.schema_id) {
            return Err(RegistryError::DuplicateSchema(schema.schema_id));
        }
        for f in &schema.fields {
            if let Some((lo, hi)) = f.range {
                if !(lo <= hi) {
                    return Err(RegistryError::BadRange {
                        schema: schema.schema_id.clone(),
                        field: f.name.clone(),
                    });
                }
            }
        }
        self.schemas.insert(schema.schema_id.clone(), schema);
        Ok(())
    }

    /// Binds `topic` to `schema_id`. Re-binding to the same schema is a no-op.
    pub fn register_topic(&mut self, topic: &str, schema_id: &str) -> Result<(), RegistryError> {
        if !self.schemas.contains_key(schema_id) {
            return Err(RegistryError::UnknownSchema(schema_id.to_string()));
        }
        match self.topics.get(topic) {
            Some(existing) if existing != schema_id => Err(RegistryError::TopicConflict(topic.to_string())),
            _ => {
                self.topics.insert(topic.to_string(), schema_id.to_string());
                Ok(())
            }
        }
    }

    pub fn schema(&self, schema_id: &str) -> Option<&TopicSchema> {
        self.schemas.get(schema_id)
    }

    pub fn topic_schema_id(&self, topic: &str) -> Option<&str> {
        self.topics.get(topic).map(String::as_str)
    }

    pub fn topic_schema(&self, topic: &str) -> Option<&TopicSchema> {
        self.topic_schema_id(topic).and_then(|id| self.schema(id))
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.topics.contains_key(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &str)> {
        self.topics.iter().map(|(t, s)| (t.as_str(), s.as_str()))
    }

    /// SHA-256 over the canonical JSON form of schemas and bindings.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("registry serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn waypoint() -> TopicSchema {
        TopicSchema::new(
            "waypoint",
            vec![
                FieldSpec::new("target", FieldKind::Point).kinematic(Kinematic::Position),
                FieldSpec::new("speed", FieldKind::Number).kinematic(Kinematic::Speed),
                FieldSpec::new("mode", FieldKind::Text)
                    .one_of(&["goto", "hold"])
                    .optional(),
            ],
        )
    }

    #[test]
    fn accepts_well_formed_payload() {
        let p = json!({"target": {"x": 1.0, "y": 2.0, "z": 0.5}, "speed": 0.3});
        assert!(waypoint().validate(&p).is_ok());
    }

    #[test]
    fn missing_field_is_named() {
        let err = waypoint().validate(&json!({"speed": 0.3})).unwrap_err();
        assert_eq!(err.field, "target");
        assert_eq!(err.reason, "missing field");
    }

    #[test]
    fn enum_and_extra_fields_rejected() {
        let p = json!({"target": {"x": 1.0, "y": 2.0, "z": 0.5}, "speed": 0.3, "mode": "fly"});
        assert_eq!(waypoint().validate(&p).unwrap_err().field, "mode");
        let p = json!({"target": {"x": 1.0, "y": 2.0, "z": 0.5}, "speed": 0.3, "boost": 1});
        assert_eq!(waypoint().validate(&p).unwrap_err().field, "boost");
    }

    #[test]
    fn range_is_closed() {
        let s = TopicSchema::new("r", vec![FieldSpec::new("v", FieldKind::Number).range(0.0, 1.0)]);
        assert!(s.validate(&json!({"v": 1.0})).is_ok());
        assert!(s.validate(&json!({"v": 0.0})).is_ok());
        assert!(s.validate(&json!({"v": 1.0001})).is_err());
    }

    #[test]
    fn registry_rejects_bad_range_and_duplicates() {
        let mut reg = SchemaRegistry::new();
        let bad = TopicSchema::new("b", vec![FieldSpec::new("v", FieldKind::Number).range(2.0, 1.0)]);
        assert!(matches!(reg.register_schema(bad), Err(RegistryError::BadRange { .. })));
        reg.register_schema(waypoint()).unwrap();
        assert!(matches!(
            reg.register_schema(waypoint()),
            Err(RegistryError::DuplicateSchema(_))
        ));
        assert!(reg.register_topic("nav/goal", "nope").is_err());
        reg.register_topic("nav/goal", "waypoint").unwrap();
        assert_eq!(reg.topic_schema_id("nav/goal"), Some("waypoint"));
    }

    #[test]
    fn digest_tracks_contents() {
        let mut a = SchemaRegistry::new();
        a.register_schema(waypoint()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.register_topic("nav/goal", "waypoint").unwrap();
        assert_ne!(a.digest(), b.digest());
        a.register_topic("nav/goal", "waypoint").unwrap();
        assert_eq!(a.digest(), b.digest());
    }
}
