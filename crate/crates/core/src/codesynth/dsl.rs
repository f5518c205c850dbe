//! Dataflow node definitions and their sandboxed interpreter.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::kf::{matrix, Kalman, KfError};
use crate::bus::{Envelope, HostedNode, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfMeasurement {
    /// Id of the node feeding this measurement.
    pub source: String,
    pub h: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Rotate a body-frame 2-vector by this state (an angle) before update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotate_by: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub angles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfParams {
    pub f: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub p0: Vec<Vec<f64>>,
    pub measurements: Vec<KfMeasurement>,
    /// State indices emitted, in order.
    pub output: Vec<usize>,
    /// When non-empty, the summed variance of these states is appended.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace_states: Vec<usize>,
}

impl KfParams {
    fn width(&self) -> usize {
        self.output.len() + usize::from(!self.trace_states.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case")]
pub enum Op {
    Sub {
        topic: String,
        fields: Vec<String>,
    },
    Window {
        n: u64,
    },
    Mean {},
    Gain {
        k: f64,
    },
    Offset {
        b: f64,
    },
    Kf(Box<KfParams>),
    Pub {
        topic: String,
        schema: String,
        fields: Vec<String>,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Sub { .. } => "sub",
            Op::Window { .. } => "window",
            Op::Mean {} => "mean",
            Op::Gain { .. } => "gain",
            Op::Offset { .. } => "offset",
            Op::Kf(_) => "kf",
            Op::Pub { .. } => "pub",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: String,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Permissions {
    pub sub: Vec<String>,
    #[serde(rename = "pub")]
    pub publish: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub ops: u64,
    pub state_bytes: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            ops: 64,
            state_bytes: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDef {
    pub nodes: Vec<OpNode>,
    pub edges: Vec<(String, String)>,
    pub permissions: Permissions,
    pub caps: Caps,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DefError {
    #[error("graph has no nodes")]
    Empty,
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("edge references unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph contains a cycle")]
    Cycle,
    #[error("node `{node}` ({op}) takes {expected} input(s), has {got}")]
    Arity {
        node: String,
        op: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("caps must be positive")]
    Caps,
    #[error("node `{node}`: {detail}")]
    Params { node: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum SandboxViolation {
    #[error("topic `{0}` is outside the permission list")]
    Topic(String),
    #[error("{0} ops in one tick exceeds the cap")]
    Ops(u64),
    #[error("{0} state bytes exceeds the cap")]
    StateBytes(u64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl SandboxViolation {
    pub fn kind(&self) -> &'static str {
        match self {
            SandboxViolation::Topic(_) => "topic",
            SandboxViolation::Ops(_) => "ops",
            SandboxViolation::StateBytes(_) => "state_bytes",
            SandboxViolation::Shape(_) => "shape",
            SandboxViolation::Numeric(_) => "numeric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SandboxError {
    #[error("invalid node definition: {0}")]
    Invalid(#[from] DefError),
    #[error("sandbox violation: {0}")]
    Violation(#[from] SandboxViolation),
}

impl NodeDef {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("node def serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn index(&self) -> Result<BTreeMap<&str, usize>, DefError> {
        let mut idx = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if idx.insert(n.id.as_str(), i).is_some() {
                return Err(DefError::DuplicateId(n.id.clone()));
            }
        }
        Ok(idx)
    }

    /// Per-node source indices, in edge order.
    fn sources(&self) -> Result<Vec<Vec<usize>>, DefError> {
        let idx = self.index()?;
        let mut src = vec![Vec::new(); self.nodes.len()];
        for (a, b) in &self.edges {
            let ia = *idx.get(a.as_str()).ok_or_else(|| DefError::UnknownNode(a.clone()))?;
            let ib = *idx.get(b.as_str()).ok_or_else(|| DefError::UnknownNode(b.clone()))?;
            src[ib].push(ia);
        }
        Ok(src)
    }

    /// Kahn's algorithm, ties broken by declaration order.
    fn topo_order(&self, sources: &[Vec<usize>]) -> Result<Vec<usize>, DefError> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = sources.iter().map(Vec::len).collect();
        let mut out_edges = vec![Vec::new(); n];
        for (dst, s) in sources.iter().enumerate() {
            for &a in s {
                out_edges[a].push(dst);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &d in &out_edges[i] {
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(DefError::Cycle)
        }
    }

    /// Structural validation: ids, edges, acyclicity, arity, parameters and
    /// caps. Topic permissions are enforced when the graph runs.
    pub fn validate(&self) -> Result<(), DefError> {
        if self.nodes.is_empty() {
            return Err(DefError::Empty);
        }
        if self.caps.ops == 0 || self.caps.state_bytes == 0 {
            return Err(DefError::Caps);
        }
        let sources = self.sources()?;
        self.topo_order(&sources)?;
        for (node, src) in self.nodes.iter().zip(&sources) {
            let got = src.len();
            let bad = |expected| DefError::Arity {
                node: node.id.clone(),
                op: node.op.name(),
                expected,
                got,
            };
            let params = |detail: String| DefError::Params {
                node: node.id.clone(),
                detail,
            };
            match &node.op {
                Op::Sub { fields, .. } => {
                    if got != 0 {
                        return Err(bad("0"));
                    }
                    if fields.is_empty() {
                        return Err(params("sub needs at least one field".into()));
                    }
                }
                Op::Kf(p) => {
                    if got == 0 {
                        return Err(bad("1 or more"));
                    }
                    validate_kf(p, &self.nodes, src).map_err(params)?;
                }
                other => {
                    if got != 1 {
                        return Err(bad("1"));
                    }
                    match other {
                        Op::Window { n: 0 } => return Err(params("window must be positive".into())),
                        Op::Pub { fields, .. } if fields.is_empty() => {
                            return Err(params("pub needs at least one field".into()))
                        }
                        Op::Gain { k } if !k.is_finite() => return Err(params("gain must be finite".into())),
                        Op::Offset { b } if !b.is_finite() => return Err(params("offset must be finite".into())),
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sub_topics(&self) -> Vec<String> {
        let mut t: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Sub { topic, .. } => Some(topic.clone()),
                _ => None,
            })
            .collect();
        t.sort();
        t.dedup();
        t
    }

    pub fn pub_topics(&self) -> Vec<String> {
        let mut t: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Pub { topic, .. } => Some(topic.clone()),
                _ => None,
            })
            .collect();
        t.sort();
        t.dedup();
        t
    }
}

fn validate_kf(p: &KfParams, nodes: &[OpNode], src: &[usize]) -> Result<(), String> {
    let n = p.x0.len();
    if n == 0 {
        return Err("kf state is empty".into());
    }
    let square = |m: &Vec<Vec<f64>>, name: &str| -> Result<(), String> {
        if m.len() != n || m.iter().any(|r| r.len() != n) {
            return Err(format!("{name} must be {n}x{n}"));
        }
        Ok(())
    };
    square(&p.f, "F")?;
    square(&p.q, "Q")?;
    square(&p.p0, "P0")?;
    if p.measurements.is_empty() {
        return Err("kf needs at least one measurement".into());
    }
    for m in &p.measurements {
        let rows = m.h.len();
        if rows == 0 || m.h.iter().any(|r| r.len() != n) {
            return Err(format!("H for `{}` must have {n} columns", m.source));
        }
        if m.r.len() != rows || m.r.iter().any(|r| r.len() != rows) {
            return Err(format!("R for `{}` must be {rows}x{rows}", m.source));
        }
        if let Some(i) = m.rotate_by {
            if i >= n || rows != 2 {
                return Err(format!(
                    "rotation for `{}` needs a 2-vector and a state angle",
                    m.source
                ));
            }
        }
        if m.angles.iter().any(|&i| i >= rows) {
            return Err(format!("angle index out of range for `{}`", m.source));
        }
        if !src.iter().any(|&s| nodes[s].id == m.source) {
            return Err(format!(
                "measurement source `{}` is not wired into the filter",
                m.source
            ));
        }
    }
    if p.output.is_empty() && p.trace_states.is_empty() {
        return Err("kf emits nothing".into());
    }
    if p.output.iter().chain(&p.trace_states).any(|&i| i >= n) {
        return Err("output index out of range".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Signal {
    Vector(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
enum State {
    Stateless,
    Window(VecDeque<Vec<f64>>),
    Kf { kf: Box<Kalman>, last_t: Option<f64> },
}

/// One emitted message: topic, schema and payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub topic: String,
    pub schema_id: String,
    pub payload: Value,
}

/// Executes a validated [`NodeDef`] one tick at a time.
#[derive(Debug, Clone)]
pub struct Interpreter {
    def: NodeDef,
    caps: Caps,
    order: Vec<usize>,
    sources: Vec<Vec<usize>>,
    state: Vec<State>,
}

/// Signal width per node, used to bound state size before anything runs.
fn widths(def: &NodeDef, order: &[usize], sources: &[Vec<usize>]) -> Vec<u64> {
    let mut w = vec![0u64; def.nodes.len()];
    for &i in order {
        let input = sources[i].first().map_or(0, |&s| w[s]);
        w[i] = match &def.nodes[i].op {
            Op::Sub { fields, .. } => fields.len() as u64,
            Op::Kf(p) => p.width() as u64,
            Op::Pub { .. } => 0,
            _ => input,
        };
    }
    w
}

fn state_bytes(def: &NodeDef, w: &[u64], sources: &[Vec<usize>]) -> u64 {
    let mut total = 0u64;
    for (i, node) in def.nodes.iter().enumerate() {
        let b = match &node.op {
            Op::Window { n } => {
                let width = sources[i].first().map_or(1, |&s| w[s].max(1));
                n.saturating_mul(width).saturating_mul(8)
            }
            Op::Kf(p) => {
                let n = p.x0.len() as u64;
                (n + n * n + 1).saturating_mul(8)
            }
            _ => 0,
        };
        total = total.saturating_add(b);
    }
    total
}

impl Interpreter {
    /// `caps` overrides the definition's own caps.
    pub fn new(def: &NodeDef, caps: Option<Caps>) -> Result<Self, SandboxError> {
        def.validate()?;
        let caps = caps.unwrap_or(def.caps);
        let sources = def.sources()?;
        let order = def.topo_order(&sources)?;
        let w = widths(def, &order, &sources);
        let bytes = state_bytes(def, &w, &sources);
        if bytes > caps.state_bytes {
            return Err(SandboxViolation::StateBytes(bytes).into());
        }
        let mut state = Vec::with_capacity(def.nodes.len());
        for node in &def.nodes {
            state.push(match &node.op {
                Op::Window { .. } => State::Window(VecDeque::new()),
                Op::Kf(p) => {
                    let kf = Kalman::new(
                        matrix(&p.f).map_err(numeric)?,
                        matrix(&p.q).map_err(numeric)?,
                        DVector::from_vec(p.x0.clone()),
                        matrix(&p.p0).map_err(numeric)?,
                    )
                    .map_err(numeric)?;
                    State::Kf {
                        kf: Box::new(kf),
                        last_t: None,
                    }
                }
                _ => State::Stateless,
            });
        }
        Ok(Self {
            def: def.clone(),
            caps,
            order,
            sources,
            state,
        })
    }

    pub fn def(&self) -> &NodeDef {
        &self.def
    }

    /// Runs one tick at time `t` over this tick's inputs. On a violation no
    /// output is produced for the tick.
    pub fn step(&mut self, t: f64, inputs: &[Envelope]) -> Result<Vec<Emission>, SandboxViolation> {
        let perms = &self.def.permissions;
        let mut values: Vec<Option<Signal>> = vec![None; self.def.nodes.len()];
        let mut out = Vec::new();
        let mut ops = 0u64;
        for &i in &self.order {
            let node = &self.def.nodes[i];
            let first = self.sources[i].first().and_then(|&s| values[s].clone());
            let value = match &node.op {
                Op::Sub { topic, fields } => {
                    if !perms.sub.contains(topic) {
                        return Err(SandboxViolation::Topic(topic.clone()));
                    }
                    match inputs.iter().rev().find(|e| &e.topic == topic) {
                        None => None,
                        Some(env) => Some(Signal::Vector(extract(&env.payload, fields)?)),
                    }
                }
                Op::Kf(p) => {
                    let present: Vec<(usize, Vec<f64>)> = p
                        .measurements
                        .iter()
                        .enumerate()
                        .filter_map(|(k, m)| {
                            let s = self.sources[i].iter().find(|&&s| self.def.nodes[s].id == m.source)?;
                            match values[*s].clone()? {
                                Signal::Vector(v) => Some((k, v)),
                                Signal::Rows(_) => None,
                            }
                        })
                        .collect();
                    if present.is_empty() {
                        None
                    } else {
                        let State::Kf { kf, last_t } = &mut self.state[i] else {
                            unreachable!()
                        };
                        Some(Signal::Vector(run_kf(kf, last_t, t, p, &present)?))
                    }
                }
                op => match first {
                    None => None,
                    Some(sig) => match op {
                        Op::Window { n } => {
                            let v = as_vector(sig)?;
                            let State::Window(buf) = &mut self.state[i] else {
                                unreachable!()
                            };
                            buf.push_back(v);
                            while buf.len() as u64 > *n {
                                buf.pop_front();
                            }
                            Some(Signal::Rows(buf.iter().cloned().collect()))
                        }
                        Op::Mean {} => Some(Signal::Vector(mean(sig)?)),
                        Op::Gain { k } => Some(map(sig, |x| x * k)),
                        Op::Offset { b } => Some(map(sig, |x| x + b)),
                        Op::Pub { topic, schema, fields } => {
                            if !perms.publish.contains(topic) {
                                return Err(SandboxViolation::Topic(topic.clone()));
                            }
                            let v = as_vector(sig)?;
                            if v.len() != fields.len() {
                                return Err(SandboxViolation::Shape(format!(
                                    "`{}` publishes {} fields from a {}-vector",
                                    node.id,
                                    fields.len(),
                                    v.len()
                                )));
                            }
                            let mut payload = Map::new();
                            for (f, x) in fields.iter().zip(v) {
                                if !x.is_finite() {
                                    return Err(SandboxViolation::Numeric(format!("`{}` produced {x}", node.id)));
                                }
                                payload.insert(f.clone(), Value::from(x));
                            }
                            out.push(Emission {
                                topic: topic.clone(),
                                schema_id: schema.clone(),
                                payload: Value::Object(payload),
                            });
                            None
                        }
                        Op::Sub { .. } | Op::Kf(_) => unreachable!(),
                    },
                },
            };
            let executed =
                value.is_some() || matches!(node.op, Op::Pub { .. }) && first_present(&self.sources[i], &values);
            if executed {
                ops += 1;
                if ops > self.caps.ops {
                    return Err(SandboxViolation::Ops(ops));
                }
            }
            values[i] = value;
        }
        Ok(out)
    }
}

fn first_present(src: &[usize], values: &[Option<Signal>]) -> bool {
    src.first().is_some_and(|&s| values[s].is_some())
}

fn numeric(e: KfError) -> SandboxError {
    SandboxViolation::Numeric(e.to_string()).into()
}

fn extract(payload: &Value, fields: &[String]) -> Result<Vec<f64>, SandboxViolation> {
    fields
        .iter()
        .map(|f| {
            payload
                .get(f)
                .and_then(Value::as_f64)
                .ok_or_else(|| SandboxViolation::Shape(format!("input lacks numeric field `{f}`")))
        })
        .collect()
}

fn as_vector(sig: Signal) -> Result<Vec<f64>, SandboxViolation> {
    match sig {
        Signal::Vector(v) => Ok(v),
        Signal::Rows(_) => Err(SandboxViolation::Shape("expected a vector, got a window".into())),
    }
}

fn mean(sig: Signal) -> Result<Vec<f64>, SandboxViolation> {
    match sig {
        Signal::Vector(v) if v.is_empty() => Err(SandboxViolation::Shape("mean of an empty vector".into())),
        Signal::Vector(v) => Ok(vec![v.iter().sum::<f64>() / v.len() as f64]),
        Signal::Rows(rows) => {
            let w = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != w) {
                return Err(SandboxViolation::Shape("ragged window".into()));
            }
            let n = rows.len() as f64;
            Ok((0..w).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect())
        }
    }
}

fn map(sig: Signal, f: impl Fn(f64) -> f64) -> Signal {
    match sig {
        Signal::Vector(v) => Signal::Vector(v.into_iter().map(&f).collect()),
        Signal::Rows(r) => Signal::Rows(r.into_iter().map(|row| row.into_iter().map(&f).collect()).collect()),
    }
}

fn run_kf(
    kf: &mut Kalman,
    last_t: &mut Option<f64>,
    t: f64,
    p: &KfParams,
    present: &[(usize, Vec<f64>)],
) -> Result<Vec<f64>, SandboxViolation> {
    if let Some(prev) = *last_t {
        kf.predict(t - prev);
    }
    *last_t = Some(t);
    for (k, z) in present {
        let m = &p.measurements[*k];
        let mut z = DVector::from_vec(z.clone());
        if z.len() != m.h.len() {
            return Err(SandboxViolation::Shape(format!(
                "measurement from `{}` has {} components, H has {} rows",
                m.source,
                z.len(),
                m.h.len()
            )));
        }
        if let Some(a) = m.rotate_by {
            let (s, c) = kf.x[a].sin_cos();
            let (bx, by) = (z[0], z[1]);
            z[0] = c * bx - s * by;
            z[1] = s * bx + c * by;
        }
        let h = matrix(&m.h).map_err(|e| SandboxViolation::Numeric(e.to_string()))?;
        let r = matrix(&m.r).map_err(|e| SandboxViolation::Numeric(e.to_string()))?;
        kf.update(&z, &h, &r, &m.angles)
            .map_err(|e| SandboxViolation::Numeric(e.to_string()))?;
    }
    let mut v: Vec<f64> = p.output.iter().map(|&i| kf.x[i]).collect();
    if !p.trace_states.is_empty() {
        v.push(kf.trace_of(&p.trace_states));
    }
    Ok(v)
}

/// Runs `def` over `inputs` grouped into ticks by stamp, outside any bus.
pub fn sandbox_run(def: &NodeDef, inputs: &[Envelope], caps: Option<Caps>) -> Result<Vec<Envelope>, SandboxError> {
    let mut interp = Interpreter::new(def, caps)?;
    let mut sorted: Vec<&Envelope> = inputs.iter().collect();
    sorted.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
    let mut out = Vec::new();
    let mut seqs: BTreeMap<String, u64> = BTreeMap::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].stamp;
        let mut j = i;
        while j < sorted.len() && sorted[j].stamp == t {
            j += 1;
        }
        let tick: Vec<Envelope> = sorted[i..j].iter().map(|e| (*e).clone()).collect();
        for em in interp.step(t, &tick)? {
            let seq = seqs.entry(em.topic.clone()).or_insert(0);
            out.push(Envelope {
                topic: em.topic,
                schema_id: em.schema_id,
                seq: *seq,
                stamp: t,
                publisher_id: "sandbox".into(),
                payload: em.payload,
            });
            *seq += 1;
        }
        i = j;
    }
    Ok(out)
}

/// A deployed definition hosted on the bus.
#[derive(Debug)]
pub struct DslNode {
    id: String,
    interp: Interpreter,
}

impl DslNode {
    pub fn new(id: &str, def: &NodeDef) -> Result<Self, SandboxError> {
        Ok(Self {
            id: id.to_string(),
            interp: Interpreter::new(def, None)?,
        })
    }
}

impl HostedNode for DslNode {
    fn node_id(&self) -> &str {
        &self.id
    }

    fn subscriptions(&self) -> Vec<String> {
        let perms = &self.interp.def().permissions;
        self.interp
            .def()
            .sub_topics()
            .into_iter()
            .filter(|t| perms.sub.contains(t))
            .collect()
    }

    fn publications(&self) -> Vec<String> {
        self.interp.def().permissions.publish.clone()
    }

    fn on_deliver(&mut self, delivered: &[Envelope]) -> Result<Vec<Message>, String> {
        let Some(t) = delivered.iter().map(|e| e.stamp).reduce(f64::max) else {
            return Ok(Vec::new());
        };
        let out = self
            .interp
            .step(t, delivered)
            .map_err(|v| format!("sandbox violation: {v}"))?;
        Ok(out
            .into_iter()
            .map(|e| Message::new(&e.topic, &self.id, e.payload))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn node(id: &str, op: Op) -> OpNode {
        OpNode { id: id.into(), op }
    }

    fn avg(n: u64) -> NodeDef {
        NodeDef {
            nodes: vec![
                node(
                    "in",
                    Op::Sub {
                        topic: "raw".into(),
                        fields: vec!["value".into()],
                    },
                ),
                node("win", Op::Window { n }),
                node("avg", Op::Mean {}),
                node(
                    "out",
                    Op::Pub {
                        topic: "avg".into(),
                        schema: "scalar".into(),
                        fields: vec!["value".into()],
                    },
                ),
            ],
            edges: vec![
                ("in".into(), "win".into()),
                ("win".into(), "avg".into()),
                ("avg".into(), "out".into()),
            ],
            permissions: Permissions {
                sub: vec!["raw".into()],
                publish: vec!["avg".into()],
            },
            caps: Caps::default(),
        }
    }

    fn env(topic: &str, t: f64, payload: Value) -> Envelope {
        Envelope {
            topic: topic.into(),
            schema_id: "scalar".into(),
            seq: 0,
            stamp: t,
            publisher_id: "p".into(),
            payload,
        }
    }

    fn values(out: &[Envelope]) -> Vec<f64> {
        out.iter().map(|e| e.payload["value"].as_f64().unwrap()).collect()
    }

    #[test]
    fn json_layout() {
        let v: Value = serde_json::from_str(&avg(3).to_json()).unwrap();
        assert_eq!(v["nodes"][1], json!({"id": "win", "op": "window", "params": {"n": 3}}));
        assert_eq!(v["nodes"][2], json!({"id": "avg", "op": "mean", "params": {}}));
        assert_eq!(v["edges"][0], json!(["in", "win"]));
        assert_eq!(v["permissions"]["pub"], json!(["avg"]));
        assert_eq!(NodeDef::from_json(&avg(3).to_json()).unwrap(), avg(3));
    }

    #[test]
    fn windowed_mean() {
        let inputs: Vec<Envelope> = (0..5)
            .map(|i| env("raw", i as f64, json!({"value": i as f64})))
            .collect();
        let out = sandbox_run(&avg(3), &inputs, None).unwrap();
        assert_eq!(values(&out), vec![0.0, 0.5, 1.0, 2.0, 3.0]);
        assert!(out.iter().all(|e| e.topic == "avg"));
    }

    #[test]
    fn structural_errors() {
        let mut d = avg(3);
        d.edges.push(("out".into(), "in".into()));
        assert!(matches!(
            d.validate(),
            Err(DefError::Arity { .. }) | Err(DefError::Cycle)
        ));
        let mut d = avg(3);
        d.edges.push(("avg".into(), "win".into()));
        assert_eq!(d.validate(), Err(DefError::Cycle));
        let mut d = avg(3);
        d.nodes[1].id = "in".into();
        assert_eq!(d.validate(), Err(DefError::DuplicateId("in".into())));
        let mut d = avg(3);
        d.caps.ops = 0;
        assert_eq!(d.validate(), Err(DefError::Caps));
        let mut d = avg(3);
        d.edges.push(("ghost".into(), "avg".into()));
        assert_eq!(d.validate(), Err(DefError::UnknownNode("ghost".into())));
    }

    #[test]
    fn violations() {
        let input = [env("raw", 0.0, json!({"value": 1.0}))];
        let mut d = avg(3);
        d.permissions.publish = vec!["elsewhere".into()];
        assert_eq!(
            sandbox_run(&d, &input, None),
            Err(SandboxError::Violation(SandboxViolation::Topic("avg".into())))
        );
        let mut d = avg(3);
        d.permissions.sub.clear();
        assert!(matches!(
            sandbox_run(&d, &input, None),
            Err(SandboxError::Violation(SandboxViolation::Topic(_)))
        ));
        assert!(matches!(
            sandbox_run(&avg(1_000_000_000), &input, None),
            Err(SandboxError::Violation(SandboxViolation::StateBytes(_)))
        ));
        assert!(matches!(
            sandbox_run(
                &avg(3),
                &input,
                Some(Caps {
                    ops: 3,
                    state_bytes: 1024
                })
            ),
            Err(SandboxError::Violation(SandboxViolation::Ops(4)))
        ));
        assert!(sandbox_run(
            &avg(3),
            &input,
            Some(Caps {
                ops: 4,
                state_bytes: 1024
            })
        )
        .is_ok());
    }

    #[test]
    fn undeclared_inputs_are_ignored() {
        let inputs = [
            env("other", 0.0, json!({"value": 9.0})),
            env("raw", 0.0, json!({"value": 1.0})),
        ];
        assert_eq!(values(&sandbox_run(&avg(2), &inputs, None).unwrap()), vec![1.0]);
        assert!(sandbox_run(&avg(2), &[env("other", 0.0, json!({"value": 9.0}))], None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn gain_offset_chain() {
        let mut d = avg(1);
        d.nodes.insert(3, node("g", Op::Gain { k: 2.0 }));
        d.nodes.insert(4, node("o", Op::Offset { b: -1.0 }));
        d.edges = vec![
            ("in".into(), "win".into()),
            ("win".into(), "avg".into()),
            ("avg".into(), "g".into()),
            ("g".into(), "o".into()),
            ("o".into(), "out".into()),
        ];
        let out = sandbox_run(&d, &[env("raw", 0.0, json!({"value": 3.0}))], None).unwrap();
        assert_eq!(values(&out), vec![5.0]);
    }
}
