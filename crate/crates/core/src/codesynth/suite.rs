//! Generated unit-test suites, executed on an isolated shadow bus.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::dsl::{DslNode, NodeDef};
use super::{NodeRequirement, SynthError, TemplateKind};
use crate::bus::{Bus, Envelope, Message, SchemaRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInput {
    pub t: f64,
    pub topic: String,
    pub payload: Value,
}

/// Predicate over the ordered output envelopes of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    /// Output number `index` has `field` within `tol` of `expect`.
    At {
        index: usize,
        field: String,
        expect: f64,
        tol: f64,
    },
    /// The last output is within `tol` (Euclidean) of `expect` on `fields`.
    Final {
        fields: Vec<String>,
        expect: Vec<f64>,
        tol: f64,
    },
    /// `field` never increases by more than `slack` between outputs.
    NonIncreasing { field: String, slack: f64 },
}

fn field(e: &Envelope, f: &str) -> Result<f64, String> {
    e.payload
        .get(f)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("output lacks field `{f}`"))
}

impl Check {
    pub fn evaluate(&self, out: &[Envelope]) -> Result<(), String> {
        match self {
            Check::At {
                index,
                field: f,
                expect,
                tol,
            } => {
                let e = out
                    .get(*index)
                    .ok_or_else(|| format!("only {} outputs, wanted #{index}", out.len()))?;
                let v = field(e, f)?;
                if (v - expect).abs() <= *tol {
                    Ok(())
                } else {
                    Err(format!("output #{index} {f} = {v}, expected {expect} ± {tol}"))
                }
            }
            Check::Final { fields, expect, tol } => {
                let e = out.last().ok_or("no outputs")?;
                let mut err2 = 0.0;
                for (f, x) in fields.iter().zip(expect) {
                    let d = field(e, f)? - x;
                    err2 += d * d;
                }
                let err = err2.sqrt();
                if err < *tol {
                    Ok(())
                } else {
                    Err(format!("final error {err:.4} is not below {tol}"))
                }
            }
            Check::NonIncreasing { field: f, slack } => {
                if out.len() < 2 {
                    return Err("fewer than two outputs".into());
                }
                let vals: Vec<f64> = out.iter().map(|e| field(e, f)).collect::<Result<_, _>>()?;
                match vals.windows(2).position(|w| w[1] > w[0] + slack) {
                    None => Ok(()),
                    Some(i) => Err(format!(
                        "{f} rose from {} to {} at output #{}",
                        vals[i],
                        vals[i + 1],
                        i + 1
                    )),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub inputs: Vec<TestInput>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub kind: String,
    pub output_topic: String,
    pub cases: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn all_passed(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

const DT: f64 = 0.1;

fn ticks(n: usize) -> impl Iterator<Item = (usize, f64)> {
    (0..n).map(|k| (k, k as f64 * DT))
}

fn param(req: &NodeRequirement, key: &str, default: f64) -> f64 {
    req.params.get(key).copied().unwrap_or(default)
}

/// Builds the kind-specific suite for a requirement.
pub fn gen_tests(req: &NodeRequirement, _def: &NodeDef) -> Result<TestSuite, SynthError> {
    let kind = TemplateKind::classify(&req.kind).ok_or_else(|| SynthError::UnknownKind(req.kind.clone()))?;
    let out_topic = req.output.0.clone();
    let cases = match kind {
        TemplateKind::Averaging => {
            let n = param(req, "window", 10.0).max(1.0) as usize;
            let input = &req.inputs[0].0;
            let constant = TestCase {
                name: "constant input".into(),
                inputs: ticks(2 * n)
                    .map(|(_, t)| TestInput {
                        t,
                        topic: input.clone(),
                        payload: json!({"value": 7.0}),
                    })
                    .collect(),
                checks: (n - 1..2 * n)
                    .map(|i| Check::At {
                        index: i,
                        field: "value".into(),
                        expect: 7.0,
                        tol: 1e-9,
                    })
                    .collect(),
            };
            let step = TestCase {
                name: "unit step".into(),
                inputs: ticks(2 * n - 1)
                    .map(|(k, t)| TestInput {
                        t,
                        topic: input.clone(),
                        payload: json!({"value": if k < n { 0.0 } else { 1.0 }}),
                    })
                    .collect(),
                checks: (1..n)
                    .map(|k| Check::At {
                        index: n - 1 + k,
                        field: "value".into(),
                        expect: k as f64 / n as f64,
                        tol: 1e-9,
                    })
                    .collect(),
            };
            vec![constant, step]
        }
        TemplateKind::DualOdom => {
            let (a, b) = (&req.inputs[0].0, &req.inputs[1].0);
            let pair = |t: f64, x: f64, y: f64| {
                [
                    TestInput {
                        t,
                        topic: a.clone(),
                        payload: json!({"x": x, "y": y}),
                    },
                    TestInput {
                        t,
                        topic: b.clone(),
                        payload: json!({"x": x, "y": y}),
                    },
                ]
            };
            vec![
                TestCase {
                    name: "noiseless consistent fixes".into(),
                    inputs: ticks(50).flat_map(|(_, t)| pair(t, 3.0, -2.0)).collect(),
                    checks: vec![Check::Final {
                        fields: vec!["x".into(), "y".into()],
                        expect: vec![3.0, -2.0],
                        tol: 0.05,
                    }],
                },
                TestCase {
                    name: "covariance contracts".into(),
                    inputs: ticks(30).flat_map(|(_, t)| pair(t, 1.0, 1.0)).collect(),
                    checks: vec![Check::NonIncreasing {
                        field: "p_trace".into(),
                        slack: 1e-12,
                    }],
                },
            ]
        }
        TemplateKind::DvlCompass => {
            let dvl = req
                .inputs
                .iter()
                .find(|(_, s)| s == "dvl")
                .map(|(t, _)| t.clone())
                .unwrap_or_default();
            let compass = req
                .inputs
                .iter()
                .find(|(_, s)| s == "compass")
                .map(|(t, _)| t.clone())
                .unwrap_or_default();
            let (x0, y0) = (param(req, "x0", 0.0), param(req, "y0", 0.0));
            let run = |n: usize, psi: f64, u: f64| -> Vec<TestInput> {
                ticks(n)
                    .flat_map(|(_, t)| {
                        [
                            TestInput {
                                t,
                                topic: dvl.clone(),
                                payload: json!({"vx": u, "vy": 0.0}),
                            },
                            TestInput {
                                t,
                                topic: compass.clone(),
                                payload: json!({"heading": psi}),
                            },
                        ]
                    })
                    .collect()
            };
            let (psi, u): (f64, f64) = (0.5, 0.3);
            let (vx, vy) = (u * psi.cos(), u * psi.sin());
            let t_end = 49.0 * DT;
            vec![
                TestCase {
                    name: "noiseless straight run".into(),
                    inputs: run(50, psi, u),
                    checks: vec![Check::Final {
                        fields: ["x", "y", "psi", "vx", "vy"].map(String::from).to_vec(),
                        expect: vec![x0 + vx * t_end, y0 + vy * t_end, psi, vx, vy],
                        tol: 0.05,
                    }],
                },
                TestCase {
                    name: "covariance contracts".into(),
                    inputs: run(30, 0.2, 0.0),
                    checks: vec![Check::NonIncreasing {
                        field: "p_trace".into(),
                        slack: 1e-12,
                    }],
                },
            ]
        }
    };
    Ok(TestSuite {
        kind: kind.as_str().into(),
        output_topic: out_topic,
        cases,
    })
}

const SHADOW_NODE: &str = "shadow-under-test";
const PROBE: &str = "suite-probe";
const FEEDER: &str = "suite-feeder";

/// Runs one case on a fresh bus built from `registry`.
pub fn run_case(
    registry: &SchemaRegistry,
    def: &NodeDef,
    output_topic: &str,
    case: &TestCase,
) -> Result<Vec<Envelope>, String> {
    let mut bus = Bus::new(registry.clone(), 0);
    let node = DslNode::new(SHADOW_NODE, def).map_err(|e| e.to_string())?;
    bus.attach_node(Box::new(node)).map_err(|e| e.to_string())?;
    let probe = bus.subscribe(output_topic, PROBE).map_err(|e| e.to_string())?;
    let mut inputs = case.inputs.clone();
    inputs.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut out = Vec::new();
    let mut i = 0;
    while i < inputs.len() {
        let t = inputs[i].t;
        while i < inputs.len() && inputs[i].t == t {
            let inp = &inputs[i];
            bus.publish(Message::new(&inp.topic, FEEDER, inp.payload.clone()).with_stamp(t))
                .map_err(|e| e.to_string())?;
            i += 1;
        }
        let dt = inputs.get(i).map_or(DT, |n| n.t - t);
        bus.tick(if dt > 0.0 { dt } else { DT }).map_err(|e| e.to_string())?;
        if let Some(f) = bus.node_faults().first() {
            return Err(f.reason.clone());
        }
        out.extend(bus.drain(probe).map_err(|e| e.to_string())?);
    }
    bus.tick(DT).map_err(|e| e.to_string())?;
    out.extend(bus.drain(probe).map_err(|e| e.to_string())?);
    Ok(out)
}

pub fn run_suite(registry: &SchemaRegistry, def: &NodeDef, suite: &TestSuite) -> SuiteResult {
    let mut failures = Vec::new();
    let mut passed = 0;
    for case in &suite.cases {
        let verdict = run_case(registry, def, &suite.output_topic, case)
            .and_then(|out| case.checks.iter().try_for_each(|c| c.evaluate(&out)));
        match verdict {
            Ok(()) => passed += 1,
            Err(e) => failures.push(format!("{}: {e}", case.name)),
        }
    }
    SuiteResult {
        passed,
        total: suite.cases.len(),
        failures,
    }
}
