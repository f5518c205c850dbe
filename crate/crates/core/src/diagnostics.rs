//! Thruster fault diagnosis over sliding windows of status samples.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{AgentSpec, Constitution, ReasonerBinding, ReasonerQuery, SafetyLimits};
use crate::sim::{
    AllocationModel, Health, StatusError, VehicleStatus, Wrench, MAX_PWM, MIN_PWM, NEUTRAL_PWM, THRUSTERS,
};
use crate::topics::{DIAGNOSTICS_REPORT, VEHICLE_STATUS};

pub const WINDOW: usize = 10;

pub const ACTION_DEAD: &str = "reduce DOF demands; replan with degraded allocation";
pub const ACTION_OUT_OF_RANGE: &str = "clamp commands; inspect thruster";
pub const ACTION_NONE: &str = "continue mission";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// |obs − neutral| at or below this counts as flat, μs.
    pub dead_eps: f64,
    /// |cmd − neutral| at or above this counts as commanded activity, μs.
    pub activity: f64,
    pub activity_count: usize,
    pub deviation: f64,
    pub deviation_count: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            dead_eps: 5.0,
            activity: 50.0,
            activity_count: 8,
            deviation: 150.0,
            deviation_count: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("window holds {0} samples, expected {WINDOW}")]
    WindowSize(usize),
    #[error("sample {index} at t={t} does not follow t={prev}")]
    OutOfOrder { index: usize, t: f64, prev: f64 },
    #[error(transparent)]
    Status(#[from] StatusError),
    #[error("malformed report: {0}")]
    Report(String),
}

/// Ten consecutive, strictly time-ordered samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusWindow(Vec<VehicleStatus>);

impl StatusWindow {
    pub fn new(samples: Vec<VehicleStatus>) -> Result<Self, DiagnosticsError> {
        if samples.len() != WINDOW {
            return Err(DiagnosticsError::WindowSize(samples.len()));
        }
        for (i, s) in samples.iter().enumerate() {
            s.check()?;
            if i > 0 && !(s.t > samples[i - 1].t) {
                return Err(DiagnosticsError::OutOfOrder {
                    index: i,
                    t: s.t,
                    prev: samples[i - 1].t,
                });
            }
        }
        Ok(Self(samples))
    }

    pub fn samples(&self) -> &[VehicleStatus] {
        &self.0
    }
}

/// One label per thruster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultLabels(pub [Health; THRUSTERS]);

impl FaultLabels {
    pub fn healthy() -> Self {
        Self([Health::Ok; THRUSTERS])
    }

    pub fn ids(&self, kind: Health) -> Vec<usize> {
        (0..THRUSTERS).filter(|&i| self.0[i] == kind).collect()
    }

    pub fn nominal(&self) -> usize {
        self.ids(Health::Ok).len()
    }
}

/// Expected PWM for a commanded normalized wrench; the same mapping the
/// simulator uses for healthy thrusters.
pub fn expected_pwm(wrench: &Wrench, allocation: &AllocationModel) -> [f64; THRUSTERS] {
    allocation.pwm_for_wrench(wrench)
}

pub fn classify(window: &StatusWindow, th: &Thresholds) -> FaultLabels {
    let mut labels = FaultLabels::healthy();
    for (i, label) in labels.0.iter_mut().enumerate() {
        let samples = window.samples().iter().map(|s| &s.thrusters[i]);
        let flat = samples.clone().all(|t| (t.pwm_obs - NEUTRAL_PWM).abs() <= th.dead_eps);
        let active = samples
            .clone()
            .filter(|t| (t.pwm_cmd - NEUTRAL_PWM).abs() >= th.activity)
            .count();
        let outside = samples.clone().any(|t| !(MIN_PWM..=MAX_PWM).contains(&t.pwm_obs));
        let deviating = samples.filter(|t| (t.pwm_obs - t.pwm_cmd).abs() > th.deviation).count();
        *label = if flat && active >= th.activity_count {
            Health::Dead
        } else if outside || deviating >= th.deviation_count {
            Health::OutOfRange
        } else {
            Health::Ok
        };
    }
    labels
}

/// Faults named in a report, nominal count, action line.
pub type ParsedReport = (Vec<(usize, Health)>, usize, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub issue: String,
    pub status: String,
    pub action: String,
    pub labels: FaultLabels,
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl Diagnosis {
    pub fn from_labels(labels: FaultLabels) -> Self {
        let dead = labels.ids(Health::Dead);
        let oor = labels.ids(Health::OutOfRange);
        let mut parts = Vec::new();
        if !dead.is_empty() {
            parts.push(format!("thrusters {} dead", join_ids(&dead)));
        }
        if !oor.is_empty() {
            parts.push(format!("thrusters {} out_of_range", join_ids(&oor)));
        }
        let issue = if parts.is_empty() {
            "ISSUE: none".to_string()
        } else {
            format!("ISSUE: {}", parts.join("; "))
        };
        let action = if !dead.is_empty() {
            ACTION_DEAD
        } else if !oor.is_empty() {
            ACTION_OUT_OF_RANGE
        } else {
            ACTION_NONE
        };
        Self {
            issue,
            status: format!("STATUS: {}/{THRUSTERS} thrusters nominal", labels.nominal()),
            action: format!("ACTION: {action}"),
            labels,
        }
    }

    pub fn render(&self) -> String {
        format!("{}\n{}\n{}", self.issue, self.status, self.action)
    }

    pub fn is_healthy(&self) -> bool {
        self.labels == FaultLabels::healthy()
    }

    pub fn to_payload(&self) -> Value {
        json!({
            "issue": self.issue,
            "status": self.status,
            "action": self.action,
            "labels": self.labels.0.iter().map(|h| h.as_str()).collect::<Vec<_>>(),
        })
    }

    /// Parses and checks the three-line report grammar.
    pub fn parse_report(text: &str) -> Result<ParsedReport, DiagnosticsError> {
        let bad = |m: &str| DiagnosticsError::Report(m.to_string());
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != 3 {
            return Err(bad("expected three lines"));
        }
        let issue = lines[0].strip_prefix("ISSUE: ").ok_or_else(|| bad("issue line"))?;
        let mut faults = Vec::new();
        if issue != "none" {
            for part in issue.split("; ") {
                let rest = part.strip_prefix("thrusters ").ok_or_else(|| bad("issue clause"))?;
                let (ids, kind) = rest.split_once(' ').ok_or_else(|| bad("issue clause"))?;
                let kind = match kind {
                    "dead" => Health::Dead,
                    "out_of_range" => Health::OutOfRange,
                    _ => return Err(bad("fault kind")),
                };
                let mut prev = None;
                for id in ids.split(',') {
                    let id: usize = id.parse().map_err(|_| bad("thruster id"))?;
                    if id >= THRUSTERS || prev.is_some_and(|p| id <= p) {
                        return Err(bad("thruster ids must ascend within 0..7"));
                    }
                    prev = Some(id);
                    faults.push((id, kind));
                }
            }
        }
        let status = lines[1]
            .strip_prefix("STATUS: ")
            .and_then(|s| s.strip_suffix(&format!("/{THRUSTERS} thrusters nominal")))
            .ok_or_else(|| bad("status line"))?;
        let k: usize = status.parse().map_err(|_| bad("status count"))?;
        if k + faults.len() != THRUSTERS {
            return Err(bad("status count disagrees with issue"));
        }
        let action = lines[2].strip_prefix("ACTION: ").ok_or_else(|| bad("action line"))?;
        if ![ACTION_DEAD, ACTION_OUT_OF_RANGE, ACTION_NONE].contains(&action) {
            return Err(bad("unknown action"));
        }
        Ok((faults, k, action.to_string()))
    }
}

pub fn diagnose(window: &StatusWindow, th: &Thresholds) -> Diagnosis {
    Diagnosis::from_labels(classify(window, th))
}

/// Sliding-window monitor over a status stream.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    pub thresholds: Thresholds,
    buf: VecDeque<VehicleStatus>,
}

impl Monitor {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            buf: VecDeque::with_capacity(WINDOW),
        }
    }

    /// Emits a diagnosis once ten samples have accumulated, then one per
    /// sample. An out-of-order or malformed sample is rejected and the
    /// window is left unchanged.
    pub fn push(&mut self, sample: VehicleStatus) -> Result<Option<Diagnosis>, DiagnosticsError> {
        sample.check()?;
        if let Some(last) = self.buf.back() {
            if !(sample.t > last.t) {
                return Err(DiagnosticsError::OutOfOrder {
                    index: self.buf.len(),
                    t: sample.t,
                    prev: last.t,
                });
            }
        }
        if self.buf.len() == WINDOW {
            self.buf.pop_front();
        }
        self.buf.push_back(sample);
        if self.buf.len() < WINDOW {
            return Ok(None);
        }
        let w = StatusWindow::new(self.buf.iter().cloned().collect())?;
        Ok(Some(diagnose(&w, &self.thresholds)))
    }
}

/// Template rule for the diagnostics role: the last ten status samples in
/// the inbox are diagnosed; fewer than ten yields a no-op.
pub fn template_rule(query: &ReasonerQuery) -> Result<String, String> {
    let samples: Vec<VehicleStatus> = query
        .inbox_items()
        .into_iter()
        .filter(|(t, _)| t == VEHICLE_STATUS)
        .filter_map(|(_, v)| VehicleStatus::from_json(&v).ok())
        .collect();
    if samples.len() < WINDOW {
        return Ok(crate::agent::NOOP.to_string());
    }
    let th = query
        .knowledge()
        .iter()
        .find_map(|k| {
            k.strip_prefix("thresholds: ")
                .and_then(|j| serde_json::from_str(j).ok())
        })
        .unwrap_or_default();
    let w = StatusWindow::new(samples[samples.len() - WINDOW..].to_vec()).map_err(|e| e.to_string())?;
    Ok(diagnose(&w, &th).to_payload().to_string())
}

pub fn diagnostics_constitution(th: &Thresholds) -> Constitution {
    Constitution::new(
        "You are the diagnostic agent. Compare commanded and observed thruster PWM over the last ten status samples.",
        "diagnosis",
    )
    .knowledge(&format!(
        "thresholds: {}",
        serde_json::to_string(th).expect("thresholds serialize")
    ))
    .knowledge("neutral PWM is 1500 us; valid range is 1100 to 1900 us")
    .guideline("answer with the three-line ISSUE / STATUS / ACTION report")
}

pub fn diagnostics_spec(id: &str, binding: ReasonerBinding, th: &Thresholds) -> AgentSpec {
    AgentSpec {
        agent_id: id.into(),
        role: "diagnostics".into(),
        constitution: diagnostics_constitution(th),
        subscriptions: vec![VEHICLE_STATUS.into()],
        publications: vec![DIAGNOSTICS_REPORT.into()],
        reasoner: binding,
        limits: SafetyLimits::tank(10.0, 10.0, 10.0, 1.0),
    }
}

/// Labels carried by a diagnosis payload.
pub fn labels_of(payload: &Value) -> Option<FaultLabels> {
    let arr = payload.get("labels")?.as_array()?;
    if arr.len() != THRUSTERS {
        return None;
    }
    let mut labels = FaultLabels::healthy();
    for (slot, v) in labels.0.iter_mut().zip(arr) {
        *slot = serde_json::from_value(v.clone()).ok()?;
    }
    Some(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ThrusterSample;

    fn window(f: impl Fn(usize, usize) -> (f64, f64)) -> StatusWindow {
        StatusWindow::new(
            (0..WINDOW)
                .map(|k| VehicleStatus {
                    t: k as f64 * 0.1,
                    armed: true,
                    mode: "guided".into(),
                    thrusters: (0..THRUSTERS)
                        .map(|i| {
                            let (c, o) = f(k, i);
                            ThrusterSample {
                                id: i as u8,
                                pwm_cmd: c,
                                pwm_obs: o,
                            }
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tracking_is_healthy() {
        let w = window(|k, _| (1600.0 + k as f64, 1600.0 + k as f64));
        let d = diagnose(&w, &Thresholds::default());
        assert_eq!(
            d.render(),
            "ISSUE: none\nSTATUS: 8/8 thrusters nominal\nACTION: continue mission"
        );
    }

    #[test]
    fn flatlined_pair_is_dead() {
        let w = window(|_, i| {
            if i == 2 || i == 3 {
                (1700.0, 1500.0)
            } else {
                (1700.0, 1700.0)
            }
        });
        let d = diagnose(&w, &Thresholds::default());
        assert_eq!(d.issue, "ISSUE: thrusters 2,3 dead");
        assert_eq!(d.status, "STATUS: 6/8 thrusters nominal");
        assert_eq!(d.action, format!("ACTION: {ACTION_DEAD}"));
    }

    #[test]
    fn over_range_counts() {
        // thruster 5 at 1950 in 7 samples: outside [1100,1900] and |obs−cmd| = 250 > 150 in 7 ≥ 6.
        let w = window(|k, i| {
            if i == 5 && k < 7 {
                (1700.0, 1950.0)
            } else {
                (1700.0, 1700.0)
            }
        });
        let labels = classify(&w, &Thresholds::default());
        assert_eq!(labels.ids(Health::OutOfRange), vec![5]);
        assert_eq!(labels.nominal(), 7);
    }

    #[test]
    fn idle_dead_is_invisible() {
        let w = window(|_, _| (1500.0, 1500.0));
        assert_eq!(classify(&w, &Thresholds::default()), FaultLabels::healthy());
    }

    #[test]
    fn activity_gate_boundary() {
        // seven active samples: below the 8-sample gate.
        let w = window(|k, i| {
            if i == 0 && k < 7 {
                (1600.0, 1500.0)
            } else {
                (1500.0, 1500.0)
            }
        });
        assert_eq!(classify(&w, &Thresholds::default()).0[0], Health::Ok);
        let w = window(|k, i| {
            if i == 0 && k < 8 {
                (1550.0, 1505.0)
            } else {
                (1500.0, 1500.0)
            }
        });
        assert_eq!(classify(&w, &Thresholds::default()).0[0], Health::Dead);
    }

    #[test]
    fn dead_precedes_out_of_range() {
        // flat at neutral while commanded far away: both rules match.
        let w = window(|_, i| if i == 1 { (1800.0, 1500.0) } else { (1500.0, 1500.0) });
        assert_eq!(classify(&w, &Thresholds::default()).0[1], Health::Dead);
    }

    #[test]
    fn window_validation() {
        assert_eq!(StatusWindow::new(vec![]), Err(DiagnosticsError::WindowSize(0)));
    }

    #[test]
    fn report_grammar_round_trip() {
        let mut labels = FaultLabels::healthy();
        labels.0[2] = Health::Dead;
        labels.0[6] = Health::OutOfRange;
        let d = Diagnosis::from_labels(labels);
        let (faults, k, action) = Diagnosis::parse_report(&d.render()).unwrap();
        assert_eq!(faults, vec![(2, Health::Dead), (6, Health::OutOfRange)]);
        assert_eq!(k, 6);
        assert_eq!(action, ACTION_DEAD);
        assert!(Diagnosis::parse_report("ISSUE: none").is_err());
    }

    #[test]
    fn monitor_slides_and_rejects_disorder() {
        let mut m = Monitor::default();
        let w = window(|_, _| (1600.0, 1600.0));
        let mut outs = Vec::new();
        for s in w.samples() {
            outs.push(m.push(s.clone()).unwrap());
        }
        assert!(outs[..9].iter().all(Option::is_none));
        assert!(outs[9].as_ref().unwrap().is_healthy());
        assert!(matches!(
            m.push(w.samples()[0].clone()),
            Err(DiagnosticsError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn expected_pwm_shares_the_sim_mapping() {
        let a = AllocationModel::default();
        assert!(expected_pwm(&[0.0; 6], &a).iter().all(|p| *p == 1500.0));
        let yaw = expected_pwm(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.1], &a);
        assert!((yaw[0] - 1500.0 + (yaw[1] - 1500.0)).abs() < 1e-9);
        assert!((yaw[0] - yaw[2]).abs() < 1e-9 && yaw[0] > 1500.0);
    }
}
