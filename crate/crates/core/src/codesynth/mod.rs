//! Runtime node synthesis: requirement → dataflow definition → generated
//! tests on a shadow bus → deployment onto the live bus.

pub mod dsl;
pub mod kf;
pub mod suite;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use dsl::{
    sandbox_run, Caps, DefError, DslNode, Emission, Interpreter, KfMeasurement, KfParams, NodeDef, Op, OpNode,
    Permissions, SandboxError, SandboxViolation,
};
pub use kf::{Kalman, KfError};
pub use suite::{gen_tests, run_case, run_suite, Check, SuiteResult, TestCase, TestInput, TestSuite};

use crate::agent::{BackendFault, Constitution, Reasoner, ReasonerQuery, NOOP};
use crate::bus::Bus;
use crate::topics::SYNTH_REQUEST;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("no template or valid definition for kind `{0}`")]
    UnknownKind(String),
    #[error("malformed requirement: {0}")]
    Requirement(String),
    #[error("synthesized definition rejected: {0}")]
    Invalid(#[from] DefError),
    #[error(transparent)]
    Backend(#[from] BackendFault),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRequirement {
    pub kind: String,
    /// `(topic, schema_id)` pairs.
    pub inputs: Vec<(String, String)>,
    pub output: (String, String),
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl NodeRequirement {
    pub fn new(kind: &str, inputs: &[(&str, &str)], output: (&str, &str)) -> Self {
        Self {
            kind: kind.into(),
            inputs: inputs.iter().map(|(t, s)| (t.to_string(), s.to_string())).collect(),
            output: (output.0.into(), output.1.into()),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn check(&self) -> Result<(), SynthError> {
        if self.kind.trim().is_empty() {
            return Err(SynthError::Requirement("empty kind".into()));
        }
        if self.inputs.is_empty() {
            return Err(SynthError::Requirement("at least one input is required".into()));
        }
        Ok(())
    }

    pub fn to_payload(&self) -> Value {
        serde_json::to_value(self).expect("requirement serializes")
    }

    pub fn from_payload(v: &Value) -> Result<Self, SynthError> {
        serde_json::from_value(v.clone()).map_err(|e| SynthError::Requirement(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Averaging,
    DualOdom,
    DvlCompass,
}

impl TemplateKind {
    pub fn classify(kind: &str) -> Option<Self> {
        let k = kind.to_lowercase();
        if k.contains("averag") {
            return Some(Self::Averaging);
        }
        let fusion = k.contains("kalman") || k.contains("kf") || k.contains("fus");
        if fusion && k.contains("dvl") && k.contains("compass") {
            Some(Self::DvlCompass)
        } else if fusion && k.contains("odom") {
            Some(Self::DualOdom)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Averaging => "averaging",
            Self::DualOdom => "dual_odom",
            Self::DvlCompass => "dvl_compass",
        }
    }
}

/// Numeric payload fields for the schemas templates know about.
pub fn schema_fields(schema: &str) -> Option<Vec<String>> {
    let f: &[&str] = match schema {
        "scalar" => &["value"],
        "odometry" => &["x", "y"],
        "dvl" => &["vx", "vy"],
        "compass" => &["heading"],
        "pose_estimate" => &["x", "y", "p_trace"],
        "nav_estimate" => &["x", "y", "psi", "vx", "vy", "p_trace"],
        "lateral_error" => &["error"],
        _ => return None,
    };
    Some(f.iter().map(|s| s.to_string()).collect())
}

fn fields_of(schema: &str) -> Result<Vec<String>, SynthError> {
    schema_fields(schema).ok_or_else(|| SynthError::Requirement(format!("no numeric layout for schema `{schema}`")))
}

fn op(id: &str, op: Op) -> OpNode {
    OpNode { id: id.into(), op }
}

fn edge(a: &str, b: &str) -> (String, String) {
    (a.into(), b.into())
}

fn diag(d: &[f64]) -> Vec<Vec<f64>> {
    (0..d.len())
        .map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect())
        .collect()
}

fn publisher(req: &NodeRequirement) -> Result<Op, SynthError> {
    Ok(Op::Pub {
        topic: req.output.0.clone(),
        schema: req.output.1.clone(),
        fields: fields_of(&req.output.1)?,
    })
}

fn averaging(req: &NodeRequirement) -> Result<NodeDef, SynthError> {
    let n = req.params.get("window").copied().unwrap_or(10.0);
    if !(n >= 1.0) || n.fract() != 0.0 {
        return Err(SynthError::Requirement(format!(
            "window must be a positive integer, got {n}"
        )));
    }
    let (topic, schema) = &req.inputs[0];
    Ok(NodeDef {
        nodes: vec![
            op(
                "in",
                Op::Sub {
                    topic: topic.clone(),
                    fields: fields_of(schema)?,
                },
            ),
            op("window", Op::Window { n: n as u64 }),
            op("mean", Op::Mean {}),
            op("out", publisher(req)?),
        ],
        edges: vec![edge("in", "window"), edge("window", "mean"), edge("mean", "out")],
        permissions: Permissions {
            sub: vec![topic.clone()],
            publish: vec![req.output.0.clone()],
        },
        caps: Caps::default(),
    })
}

fn dual_odom(req: &NodeRequirement) -> Result<NodeDef, SynthError> {
    let odo: Vec<&(String, String)> = req.inputs.iter().filter(|(_, s)| s == "odometry").collect();
    if odo.len() != 2 {
        return Err(SynthError::Requirement(
            "dual odometry fusion needs two odometry inputs".into(),
        ));
    }
    let p = |k: &str, d: f64| req.params.get(k).copied().unwrap_or(d);
    let (sa, sb, q) = (p("sigma_a", 0.1), p("sigma_b", 0.1), p("q_position", 0.01));
    let kf = KfParams {
        f: diag(&[0.0, 0.0]),
        q: diag(&[q, q]),
        x0: vec![p("x0", 0.0), p("y0", 0.0)],
        p0: diag(&[10.0, 10.0]),
        measurements: vec![
            KfMeasurement {
                source: "odom_a".into(),
                h: diag(&[1.0, 1.0]),
                r: diag(&[sa * sa, sa * sa]),
                rotate_by: None,
                angles: vec![],
            },
            KfMeasurement {
                source: "odom_b".into(),
                h: diag(&[1.0, 1.0]),
                r: diag(&[sb * sb, sb * sb]),
                rotate_by: None,
                angles: vec![],
            },
        ],
        output: vec![0, 1],
        trace_states: vec![0, 1],
    };
    Ok(NodeDef {
        nodes: vec![
            op(
                "odom_a",
                Op::Sub {
                    topic: odo[0].0.clone(),
                    fields: fields_of("odometry")?,
                },
            ),
            op(
                "odom_b",
                Op::Sub {
                    topic: odo[1].0.clone(),
                    fields: fields_of("odometry")?,
                },
            ),
            op("kf", Op::Kf(Box::new(kf))),
            op("out", publisher(req)?),
        ],
        edges: vec![edge("odom_a", "kf"), edge("odom_b", "kf"), edge("kf", "out")],
        permissions: Permissions {
            sub: vec![odo[0].0.clone(), odo[1].0.clone()],
            publish: vec![req.output.0.clone()],
        },
        caps: Caps::default(),
    })
}

/// State `[x, y, ψ, vx, vy]`: constant-velocity dead reckoning, compass on
/// ψ, body-frame DVL rotated into the world frame by the estimated ψ.
fn dvl_compass(req: &NodeRequirement) -> Result<NodeDef, SynthError> {
    let find = |schema: &str| {
        req.inputs
            .iter()
            .find(|(_, s)| s == schema)
            .map(|(t, _)| t.clone())
            .ok_or_else(|| SynthError::Requirement(format!("missing `{schema}` input")))
    };
    let (dvl, compass) = (find("dvl")?, find("compass")?);
    let p = |k: &str, d: f64| req.params.get(k).copied().unwrap_or(d);
    let (sd, sc) = (p("sigma_dvl", 0.02), p("sigma_compass", 0.01));
    let (qv, qh) = (p("q_velocity", 0.05), p("q_heading", 0.01));
    let mut f = diag(&[0.0; 5]);
    f[0][3] = 1.0;
    f[1][4] = 1.0;
    let kf = KfParams {
        f,
        q: diag(&[0.0, 0.0, qh, qv, qv]),
        x0: vec![p("x0", 0.0), p("y0", 0.0), p("heading0", 0.0), 0.0, 0.0],
        p0: diag(&[1e-4, 1e-4, 1.0, 1.0, 1.0]),
        measurements: vec![
            KfMeasurement {
                source: "compass".into(),
                h: vec![vec![0.0, 0.0, 1.0, 0.0, 0.0]],
                r: vec![vec![sc * sc]],
                rotate_by: None,
                angles: vec![0],
            },
            KfMeasurement {
                source: "dvl".into(),
                h: vec![vec![0.0, 0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 1.0]],
                r: diag(&[sd * sd, sd * sd]),
                rotate_by: Some(2),
                angles: vec![],
            },
        ],
        output: vec![0, 1, 2, 3, 4],
        trace_states: vec![2, 3, 4],
    };
    Ok(NodeDef {
        nodes: vec![
            op(
                "dvl",
                Op::Sub {
                    topic: dvl.clone(),
                    fields: fields_of("dvl")?,
                },
            ),
            op(
                "compass",
                Op::Sub {
                    topic: compass.clone(),
                    fields: fields_of("compass")?,
                },
            ),
            op("kf", Op::Kf(Box::new(kf))),
            op("out", publisher(req)?),
        ],
        edges: vec![edge("dvl", "kf"), edge("compass", "kf"), edge("kf", "out")],
        permissions: Permissions {
            sub: vec![dvl, compass],
            publish: vec![req.output.0.clone()],
        },
        caps: Caps::default(),
    })
}

/// Template-backed definition for a requirement.
pub fn template_def(req: &NodeRequirement) -> Result<NodeDef, SynthError> {
    req.check()?;
    match TemplateKind::classify(&req.kind) {
        Some(TemplateKind::Averaging) => averaging(req),
        Some(TemplateKind::DualOdom) => dual_odom(req),
        Some(TemplateKind::DvlCompass) => dvl_compass(req),
        None => Err(SynthError::UnknownKind(req.kind.clone())),
    }
}

/// Template rule for the code-synthesis role.
pub fn template_rule(query: &ReasonerQuery) -> Result<String, String> {
    let req = query
        .inbox_items()
        .into_iter()
        .rfind(|(t, _)| t == SYNTH_REQUEST)
        .and_then(|(_, v)| NodeRequirement::from_payload(&v).ok());
    Ok(match req.map(|r| template_def(&r)) {
        Some(Ok(def)) => serde_json::to_string(&def).expect("node def serializes"),
        _ => NOOP.to_string(),
    })
}

pub fn codesynth_constitution() -> Constitution {
    Constitution::new(
        "You are the code synthesis agent. Translate a node requirement into a dataflow node definition.",
        "node_def",
    )
    .knowledge("operators: sub, window, mean, gain, offset, kf, pub")
    .knowledge("every sub and pub topic must appear in the permission list")
    .guideline("reply NOOP when no operator graph satisfies the requirement")
}

/// Asks `reasoner` for a definition and validates whatever comes back.
pub fn synthesize(req: &NodeRequirement, reasoner: &mut dyn Reasoner) -> Result<NodeDef, SynthError> {
    req.check()?;
    let query = ReasonerQuery {
        system_text: codesynth_constitution().render(),
        context: Vec::new(),
        user_content: format!("{SYNTH_REQUEST} {}\n", req.to_payload()),
    };
    let reply = reasoner.infer(&query)?;
    if reply.is_noop() {
        return Err(SynthError::UnknownKind(req.kind.clone()));
    }
    let def = NodeDef::from_json(&reply.content).map_err(|_| SynthError::UnknownKind(req.kind.clone()))?;
    def.validate()?;
    Ok(def)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployReport {
    pub node_id: String,
    pub generation_time_s: f64,
    pub tests_passed: usize,
    pub tests_total: usize,
    pub deployed: bool,
    pub reason: Option<String>,
    pub artifact: Option<PathBuf>,
}

impl DeployReport {
    fn rejected(node_id: &str, passed: usize, total: usize, reason: String) -> Self {
        Self {
            node_id: node_id.into(),
            generation_time_s: 0.0,
            tests_passed: passed,
            tests_total: total,
            deployed: false,
            reason: Some(reason),
            artifact: None,
        }
    }

    pub fn to_payload(&self) -> Value {
        let mut v = json!({
            "node_id": self.node_id,
            "deployed": self.deployed,
            "tests_passed": self.tests_passed,
            "tests_total": self.tests_total,
            "generation_time_s": self.generation_time_s,
        });
        if let Some(r) = &self.reason {
            v["reason"] = json!(r);
        }
        v
    }
}

fn artifact_name(node_id: &str) -> String {
    let s: String = node_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{s}.json")
}

/// Runs `suite` on a shadow bus; on a full pass writes the definition to
/// `dir` and attaches it to `bus`. Call between ticks.
pub fn deploy(
    bus: &mut Bus,
    node_id: &str,
    def: &NodeDef,
    suite: &TestSuite,
    dir: &Path,
) -> Result<DeployReport, SynthError> {
    let total = suite.cases.len();
    if let Err(e) = def.validate() {
        return Ok(DeployReport::rejected(
            node_id,
            0,
            total,
            format!("invalid definition: {e}"),
        ));
    }
    if let Some(t) = def
        .sub_topics()
        .iter()
        .chain(&def.pub_topics())
        .find(|t| !bus.registry().has_topic(t))
    {
        return Ok(DeployReport::rejected(
            node_id,
            0,
            total,
            format!("topic `{t}` is not registered"),
        ));
    }
    if bus.node_ids().iter().any(|n| n == node_id) {
        return Ok(DeployReport::rejected(
            node_id,
            0,
            total,
            format!("node `{node_id}` is already deployed"),
        ));
    }
    let result = run_suite(bus.registry(), def, suite);
    if !result.all_passed() {
        let reason = if total == 0 {
            "empty test suite".to_string()
        } else {
            format!(
                "{}/{} tests passed: {}",
                result.passed,
                total,
                result.failures.join("; ")
            )
        };
        return Ok(DeployReport::rejected(node_id, result.passed, total, reason));
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join(artifact_name(node_id));
    std::fs::write(&path, def.to_json())?;
    let node = DslNode::new(node_id, def).map_err(|e| SynthError::Requirement(e.to_string()))?;
    if let Err(e) = bus.attach_node(Box::new(node)) {
        return Ok(DeployReport::rejected(node_id, result.passed, total, e.to_string()));
    }
    Ok(DeployReport {
        node_id: node_id.into(),
        generation_time_s: 0.0,
        tests_passed: result.passed,
        tests_total: total,
        deployed: true,
        reason: None,
        artifact: Some(path),
    })
}

/// Removes a deployed node. Returns whether one was attached.
pub fn undeploy(bus: &mut Bus, node_id: &str) -> bool {
    bus.detach_node(node_id).is_some()
}

/// Full pipeline: synthesize, generate tests, deploy. Generation time
/// covers synthesis and test generation.
pub fn synthesize_and_deploy(
    bus: &mut Bus,
    node_id: &str,
    req: &NodeRequirement,
    reasoner: &mut dyn Reasoner,
    dir: &Path,
) -> Result<DeployReport, SynthError> {
    let started = Instant::now();
    let def = synthesize(req, reasoner)?;
    let suite = gen_tests(req, &def)?;
    let gen = started.elapsed().as_secs_f64();
    let mut report = deploy(bus, node_id, &def, &suite, dir)?;
    report.generation_time_s = gen;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{PlaybackBackend, TemplateBackend};
    use crate::bus::Message;
    use crate::topics::{self, standard_registry};

    fn avg_req() -> NodeRequirement {
        NodeRequirement::new(
            "stateful averaging filter",
            &[(topics::RAW_SCALAR, "scalar")],
            (topics::FILTERED_SCALAR, "scalar"),
        )
        .param("window", 10.0)
    }

    fn odom_req() -> NodeRequirement {
        NodeRequirement::new(
            "kalman fuse two odometry",
            &[(topics::ODOM_A, "odometry"), (topics::ODOM_B, "odometry")],
            (topics::FUSED_ODOM, "pose_estimate"),
        )
    }

    fn nav_req() -> NodeRequirement {
        NodeRequirement::new(
            "kalman filter dvl compass",
            &[(topics::DVL, "dvl"), (topics::COMPASS, "compass")],
            (topics::FUSED_NAV, "nav_estimate"),
        )
    }

    #[test]
    fn classification() {
        assert_eq!(
            TemplateKind::classify("Stateful Averaging Filter"),
            Some(TemplateKind::Averaging)
        );
        assert_eq!(
            TemplateKind::classify("kalman filter dvl compass"),
            Some(TemplateKind::DvlCompass)
        );
        assert_eq!(
            TemplateKind::classify("Kalman fuse two odometry topics"),
            Some(TemplateKind::DualOdom)
        );
        assert_eq!(TemplateKind::classify("teleport vehicle"), None);
    }

    #[test]
    fn template_shapes() {
        let mut t = TemplateBackend::standard("codesynth");
        let d = synthesize(&avg_req(), &mut t).unwrap();
        assert_eq!(d.nodes.len(), 4);
        let d = synthesize(&nav_req(), &mut t).unwrap();
        let Op::Kf(p) = &d.nodes[2].op else {
            panic!("kf expected")
        };
        assert_eq!(p.x0.len(), 5);
        let bad = NodeRequirement::new(
            "teleport vehicle",
            &[(topics::RAW_SCALAR, "scalar")],
            (topics::FILTERED_SCALAR, "scalar"),
        );
        assert!(matches!(synthesize(&bad, &mut t), Err(SynthError::UnknownKind(_))));
    }

    #[test]
    fn template_is_byte_deterministic() {
        let a = template_def(&nav_req()).unwrap().to_json();
        let b = template_def(&nav_req()).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_suites_pass() {
        let reg = standard_registry();
        for req in [avg_req(), odom_req(), nav_req()] {
            let def = template_def(&req).unwrap();
            let suite = gen_tests(&req, &def).unwrap();
            assert!(suite.cases.len() >= 2);
            let r = run_suite(&reg, &def, &suite);
            assert!(r.all_passed(), "{}: {:?}", req.kind, r.failures);
        }
    }

    #[test]
    fn defective_def_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bus = Bus::new(standard_registry(), 0);
        let req = avg_req();
        let mut def = template_def(&req).unwrap();
        def.nodes.insert(3, op("bias", Op::Offset { b: 0.01 }));
        def.edges = vec![
            edge("in", "window"),
            edge("window", "mean"),
            edge("mean", "bias"),
            edge("bias", "out"),
        ];
        let suite = gen_tests(&req, &def).unwrap();
        let rep = deploy(&mut bus, "avg", &def, &suite, dir.path()).unwrap();
        assert!(!rep.deployed);
        assert!(rep.reason.is_some());
        assert!(bus.node_ids().is_empty());
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn deploy_goes_live_and_undeploys() {
        let dir = tempfile::tempdir().unwrap();
        let mut bus = Bus::new(standard_registry(), 0);
        let probe = bus.subscribe(topics::FILTERED_SCALAR, "probe").unwrap();
        let mut t = TemplateBackend::standard("codesynth");
        let rep = synthesize_and_deploy(&mut bus, "avg", &avg_req(), &mut t, dir.path()).unwrap();
        assert!(rep.deployed, "{rep:?}");
        assert_eq!((rep.tests_passed, rep.tests_total), (2, 2));
        let on_disk = std::fs::read_to_string(rep.artifact.unwrap()).unwrap();
        assert_eq!(NodeDef::from_json(&on_disk).unwrap(), template_def(&avg_req()).unwrap());

        bus.publish(Message::new(topics::RAW_SCALAR, "sensor", json!({"value": 4.0})))
            .unwrap();
        bus.tick(0.1).unwrap();
        bus.tick(0.1).unwrap();
        let got = bus.drain(probe).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload["value"], json!(4.0));

        assert!(undeploy(&mut bus, "avg"));
        bus.publish(Message::new(topics::RAW_SCALAR, "sensor", json!({"value": 4.0})))
            .unwrap();
        bus.tick(0.1).unwrap();
        bus.tick(0.1).unwrap();
        assert!(bus.drain(probe).unwrap().is_empty());
    }

    #[test]
    fn playback_output_must_validate() {
        let mut p = PlaybackBackend::new(["{\"nodes\":[],\"edges\":[],\"permissions\":{\"sub\":[],\"pub\":[]},\"caps\":{\"ops\":1,\"state_bytes\":1}}", "not json"]);
        assert!(matches!(
            synthesize(&avg_req(), &mut p),
            Err(SynthError::Invalid(DefError::Empty))
        ));
        assert!(matches!(
            synthesize(&avg_req(), &mut p),
            Err(SynthError::UnknownKind(_))
        ));
    }
}
