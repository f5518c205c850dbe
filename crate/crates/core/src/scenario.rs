//! Scenario files and the runner behind the `run` subcommand.
//!
//! A scenario names one experiment and carries every input it needs: seeds,
//! backend, world/vehicle/sensor/fault/disturbance sections and map paths.
//! Running it writes per-run traces (with a replay sidecar), a CSV of result
//! rows and `summary.json` holding metrics, file digests and assertion
//! outcomes.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Agent, ReasonerBinding, RemoteConfig};
use crate::bus::{Bus, Envelope, Message, SubscriptionRecord, Trace};
use crate::diagnostics::{diagnostics_spec, Thresholds, WINDOW};
use crate::experiments::diagnostics::Maneuver;
use crate::experiments::{self, ExperimentError};
use crate::mission::reference_prompts;
use crate::planner::{GridMap, PerceptionParams};
use crate::sim::{Disturbance, Health, SensorConfig, Sensors, Vehicle, VehicleKind, VehicleState, World};
use crate::topics::{registry_with_intents, VEHICLE_STATUS};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("field `{field}`: no such file {path:?}")]
    MissingPath { field: String, path: PathBuf },
    #[error("remote backend needs the endpoint in the environment")]
    RemoteUnconfigured,
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trace(#[from] crate::bus::TraceError),
    #[error(transparent)]
    Bus(#[from] crate::bus::BusError),
}

impl ScenarioError {
    fn field(field: &str, reason: impl Into<String>) -> Self {
        Self::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Diagnostics,
    Negotiation,
    Recovery,
    Tuning,
    Navrepair,
    Planning,
    Interpretation,
    /// Free-running world: vehicles fly constant twists under the configured
    /// faults and disturbance while a diagnostics agent watches each one.
    World,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Diagnostics => "diagnostics",
            Self::Negotiation => "negotiation",
            Self::Recovery => "recovery",
            Self::Tuning => "tuning",
            Self::Navrepair => "navrepair",
            Self::Planning => "planning",
            Self::Interpretation => "interpretation",
            Self::World => "world",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Template,
    Playback,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Playback replies, one per line.
    pub replies: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub dt: f64,
    pub current: [f64; 2],
    pub pipeline: Vec<[f64; 2]>,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            dt: 0.1,
            current: [0.0; 2],
            pipeline: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub id: String,
    #[serde(default = "default_kind")]
    pub kind: VehicleKind,
    /// x, y, depth.
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    /// Constant body twist commanded every tick.
    #[serde(default)]
    pub twist: [f64; 6],
    /// Fly the seeded excitation maneuver (direct wrench) instead of the
    /// twist, so every thruster stays visibly active.
    #[serde(default)]
    pub maneuver: bool,
}

fn default_kind() -> VehicleKind {
    VehicleKind::Auv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    #[serde(default)]
    pub vehicle: Option<String>,
    pub thrusters: Vec<usize>,
    #[serde(default = "default_health")]
    pub kind: Health,
    #[serde(default)]
    pub at_tick: u64,
    #[serde(default)]
    pub clear_tick: Option<u64>,
}

fn default_health() -> Health {
    Health::Dead
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    #[serde(default)]
    pub vehicle: Option<String>,
    #[serde(default)]
    pub pulse: [f64; 2],
    /// Lateral deviations the pulse drives the vehicle to, m.
    pub deviations: Vec<f64>,
    #[serde(default)]
    pub residual: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub metric: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Tick budget: world ticks for `world`, status samples per trial for
    /// `diagnostics`; the other experiments have fixed lengths.
    pub ticks: Option<u64>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub world: WorldSection,
    #[serde(default)]
    pub vehicles: Vec<VehicleSection>,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub faults: Vec<FaultSection>,
    pub disturbance: Option<DisturbanceSection>,
    /// ASCII maps with S and G glyphs, relative to the scenario file.
    #[serde(default)]
    pub maps: Vec<PathBuf>,
    #[serde(default)]
    pub perception: PerceptionParams,
    #[serde(default)]
    pub miss_sweep: Vec<f64>,
    /// Negotiation scenario names; empty runs all.
    #[serde(default)]
    pub cases: Vec<String>,
    /// Mission commands; empty runs the reference prompts.
    #[serde(default)]
    pub commands: Vec<String>,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<Assertion>,
}

impl ScenarioConfig {
    /// Parses and validates; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let mut c: Self = toml::from_str(text)?;
        for m in &mut c.maps {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if let Some(r) = &mut c.backend.replies {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(ScenarioError::field("name", "empty"));
        }
        if self.seeds.is_empty() {
            return Err(ScenarioError::field("seeds", "at least one seed is required"));
        }
        if !(self.world.dt > 0.0) {
            return Err(ScenarioError::field("world.dt", "must be positive"));
        }
        for (i, m) in self.maps.iter().enumerate() {
            if !m.is_file() {
                return Err(ScenarioError::MissingPath {
                    field: format!("maps[{i}]"),
                    path: m.clone(),
                });
            }
        }
        if self.backend.kind == BackendKind::Playback {
            match &self.backend.replies {
                None => return Err(ScenarioError::field("backend.replies", "playback needs a replies file")),
                Some(p) if !p.is_file() => {
                    return Err(ScenarioError::MissingPath {
                        field: "backend.replies".into(),
                        path: p.clone(),
                    })
                }
                _ => {}
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.thrusters.iter().any(|&t| t >= crate::sim::THRUSTERS) {
                return Err(ScenarioError::field(
                    &format!("faults[{i}].thrusters"),
                    "thruster index out of range",
                ));
            }
        }
        if let Some(d) = &self.disturbance {
            if d.deviations.is_empty() || d.deviations.iter().any(|v| !(*v > 0.0)) {
                return Err(ScenarioError::field(
                    "disturbance.deviations",
                    "positive deviations required",
                ));
            }
        }
        if self.experiment == ExperimentKind::World && self.vehicles.is_empty() {
            return Err(ScenarioError::field(
                "vehicles",
                "world scenarios need at least one vehicle",
            ));
        }
        for (i, a) in self.assertions.iter().enumerate() {
            if a.min.is_none() && a.max.is_none() {
                return Err(ScenarioError::field(&format!("assert[{i}]"), "needs min or max"));
            }
        }
        Ok(())
    }

    /// Digest of the canonical (parsed) configuration.
    pub fn digest(&self) -> String {
        let v = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&v))
    }

    pub fn binding(&self) -> Result<ReasonerBinding, ScenarioError> {
        Ok(match self.backend.kind {
            BackendKind::Template => ReasonerBinding::Template,
            BackendKind::Playback => {
                let path = self
                    .backend
                    .replies
                    .as_ref()
                    .ok_or_else(|| ScenarioError::field("backend.replies", "missing"))?;
                let replies = fs::read_to_string(path)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(str::to_string)
                    .collect();
                ReasonerBinding::Playback(replies)
            }
            BackendKind::Remote => {
                ReasonerBinding::Remote(RemoteConfig::from_env().ok_or(ScenarioError::RemoteUnconfigured)?)
            }
        })
    }
}

/// Command-line overrides for one run.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Runs only this seed.
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub ticks: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ScenarioConfig) -> Result<(), ScenarioError> {
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if let Some(b) = self.backend {
            c.backend.kind = b;
        }
        if let Some(t) = self.ticks {
            c.ticks = Some(t);
        }
        c.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub metric: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub name: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub backend: BackendKind,
    pub config_digest: String,
    /// Relative path → sha256 of every file written.
    pub files: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

impl ReportBundle {
    /// One digest over all written files.
    pub fn report_digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.files {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Sidecar written next to every trace so `replay` can rebuild the bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// Agents with `intent/<id>` topics in the registry.
    pub intents: Vec<String>,
    pub subscriptions: Vec<SubscriptionRecord>,
    pub inbox_digests: BTreeMap<String, String>,
}

pub fn sidecar_path(trace: &Path) -> PathBuf {
    trace.with_extension("meta.json")
}

fn sha_file(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Writer<'a> {
    out: &'a Path,
    files: BTreeMap<String, String>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), ScenarioError> {
        let path = self.out.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), sha_file(bytes));
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.put(rel, &bytes)
    }

    fn trace(&mut self, label: &str, bus: &Bus) -> Result<(), ScenarioError> {
        let intents = bus
            .registry()
            .topics()
            .filter_map(|(t, _)| t.strip_prefix("intent/").map(str::to_string))
            .collect();
        let meta = TraceMeta {
            intents,
            subscriptions: bus.subscriptions(),
            inbox_digests: bus.inbox_digests(),
        };
        self.put(&format!("traces/{label}.jsonl"), &bus.trace().to_jsonl_bytes())?;
        self.put(&format!("traces/{label}.meta.json"), &serde_json::to_vec_pretty(&meta)?)
    }
}

type Metrics = BTreeMap<String, f64>;

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs `config` and writes the bundle under `out`.
pub fn run_scenario(config: &ScenarioConfig, out: &Path) -> Result<ReportBundle, ScenarioError> {
    fs::create_dir_all(out)?;
    let mut w = Writer {
        out,
        files: BTreeMap::new(),
    };
    let binding = config.binding()?;
    let metrics = match config.experiment {
        ExperimentKind::Diagnostics => run_diagnostics(config, &binding, &mut w)?,
        ExperimentKind::Negotiation => run_negotiation(config, &mut w)?,
        ExperimentKind::Recovery => run_recovery(config, &mut w)?,
        ExperimentKind::Tuning => run_tuning(&binding, &mut w)?,
        ExperimentKind::Navrepair => run_navrepair(config, &mut w)?,
        ExperimentKind::Planning => run_planning(config, &binding, &mut w)?,
        ExperimentKind::Interpretation => run_interpretation(config, &binding, &mut w)?,
        ExperimentKind::World => run_world(config, &binding, &mut w)?,
    };
    let assertions: Vec<AssertionResult> = config
        .assertions
        .iter()
        .map(|a| {
            let value = metrics.get(&a.metric).copied();
            let passed = value.is_some_and(|v| a.min.is_none_or(|m| v >= m) && a.max.is_none_or(|m| v <= m));
            AssertionResult {
                metric: a.metric.clone(),
                value,
                min: a.min,
                max: a.max,
                passed,
            }
        })
        .collect();
    let bundle = ReportBundle {
        name: config.name.clone(),
        experiment: config.experiment.as_str().into(),
        seeds: config.seeds.clone(),
        backend: config.backend.kind,
        config_digest: config.digest(),
        files: w.files,
        metrics,
        passed: assertions.iter().all(|a| a.passed),
        assertions,
    };
    fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&bundle)?)?;
    Ok(bundle)
}

fn run_diagnostics(c: &ScenarioConfig, binding: &ReasonerBinding, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    use experiments::diagnostics::{run_trial, CONFIGS, SAMPLES};
    let cases: Vec<Vec<usize>> = if c.faults.is_empty() {
        CONFIGS.iter().map(|f| f.to_vec()).collect()
    } else {
        c.faults.iter().map(|f| f.thrusters.clone()).collect()
    };
    let samples = c.ticks.map_or(SAMPLES, |t| t as usize);
    let mut rows = Vec::new();
    for (i, faults) in cases.iter().enumerate() {
        for (k, &seed) in c.seeds.iter().enumerate() {
            let (row, bus) = run_trial(i + 1, faults, k + 1, seed, binding.clone(), samples)?;
            w.trace(&format!("diagnostics-case{}-seed{seed}", i + 1), &bus)?;
            rows.push(row);
        }
    }
    w.csv("diagnostics.csv", &rows)?;
    let correct = rows.iter().filter(|r| r.correct).count();
    Ok(Metrics::from([
        ("trials".into(), rows.len() as f64),
        ("correct".into(), correct as f64),
        ("accuracy".into(), correct as f64 / rows.len().max(1) as f64),
    ]))
}

fn run_negotiation(c: &ScenarioConfig, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    use experiments::negotiation::{run_scenario as run_pair, scenarios};
    let all = scenarios();
    for name in &c.cases {
        if !all.iter().any(|s| s.name == name) {
            return Err(ScenarioError::field(
                "cases",
                format!("unknown negotiation case `{name}`"),
            ));
        }
    }
    let mut rows = Vec::new();
    for sc in all
        .iter()
        .filter(|s| c.cases.is_empty() || c.cases.iter().any(|n| n == s.name))
    {
        for &seed in &c.seeds {
            let (row, bus) = run_pair(sc, seed)?;
            w.trace(&format!("negotiation-{}-seed{seed}", sc.name), &bus)?;
            rows.push(row);
        }
    }
    w.csv("negotiation.csv", &rows)?;
    let tight = rows
        .iter()
        .filter(|r| r.scenario == "tight_corridor")
        .map(|r| r.min_clearance)
        .fold(f64::INFINITY, f64::min);
    let mut m = Metrics::from([
        ("runs".into(), rows.len() as f64),
        (
            "collision_free".into(),
            rows.iter().filter(|r| r.collision_free).count() as f64,
        ),
        (
            "one_yield_per_conflict".into(),
            rows.iter().filter(|r| r.one_yield_per_conflict()).count() as f64,
        ),
        (
            "min_clearance".into(),
            rows.iter().map(|r| r.min_clearance).fold(f64::INFINITY, f64::min),
        ),
        (
            "conflicts".into(),
            rows.iter().map(|r| r.conflicts).sum::<usize>() as f64,
        ),
    ]);
    if tight.is_finite() {
        m.insert("tight_corridor_min_clearance".into(), tight);
    }
    Ok(m)
}

fn run_recovery(c: &ScenarioConfig, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    use experiments::recovery::{monotone, run, RecoveryRow, DEVIATIONS};
    let deviations = c
        .disturbance
        .as_ref()
        .map_or(DEVIATIONS.to_vec(), |d| d.deviations.clone());
    let mut rows = Vec::new();
    for &deviation in &deviations {
        for direction in [1.0, -1.0] {
            for &seed in &c.seeds {
                let mut times = [f64::INFINITY; 2];
                for (k, memory) in [false, true].into_iter().enumerate() {
                    let (r, bus) = run(deviation, direction, seed, memory)?;
                    let dir = if direction > 0.0 { "pos" } else { "neg" };
                    let mem = if memory { "memory" } else { "plain" };
                    w.trace(&format!("recovery-{deviation}-{dir}-seed{seed}-{mem}"), &bus)?;
                    times[k] = r.recovery_s.unwrap_or(f64::INFINITY);
                }
                rows.push(RecoveryRow {
                    deviation,
                    direction,
                    seed,
                    without_memory_s: times[0],
                    with_memory_s: times[1],
                    faster: times[1] < times[0],
                });
            }
        }
    }
    w.csv("recovery.csv", &rows)?;
    let mut m = Metrics::from([
        ("trials".into(), rows.len() as f64),
        ("faster".into(), rows.iter().filter(|r| r.faster).count() as f64),
        ("monotone".into(), flag(monotone(&rows))),
    ]);
    for &d in &deviations {
        let sel: Vec<&RecoveryRow> = rows.iter().filter(|r| r.deviation == d).collect();
        let n = sel.len().max(1) as f64;
        m.insert(
            format!("mean_without_{d}"),
            sel.iter().map(|r| r.without_memory_s).sum::<f64>() / n,
        );
        m.insert(
            format!("mean_with_{d}"),
            sel.iter().map(|r| r.with_memory_s).sum::<f64>() / n,
        );
    }
    Ok(m)
}

fn run_tuning(binding: &ReasonerBinding, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    let (rows, sums, bus) = experiments::tuning::run_all(binding)?;
    w.csv("tuning.csv", &rows)?;
    w.csv("tuning_summary.csv", &sums)?;
    w.trace("tuning", &bus)?;
    let first = sums.first();
    Ok(Metrics::from([
        ("pairs".into(), sums.len() as f64),
        ("converged".into(), sums.iter().filter(|s| s.passes()).count() as f64),
        (
            "standard_first_relevance".into(),
            first.map_or(f64::NAN, |s| s.first_relevance),
        ),
        (
            "standard_first_words".into(),
            first.map_or(f64::NAN, |s| s.first_words as f64),
        ),
    ]))
}

fn run_navrepair(c: &ScenarioConfig, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    use experiments::navrepair::{run, synth_suites};
    let artifacts = w.out.join("artifacts");
    fs::create_dir_all(&artifacts)?;
    let suites = synth_suites(&artifacts)?;
    w.csv("codesynth.csv", &suites)?;
    let mut rows = Vec::new();
    for &seed in &c.seeds {
        let (row, bus) = run(seed, &artifacts)?;
        w.trace(&format!("navrepair-seed{seed}"), &bus)?;
        rows.push(row);
    }
    w.csv("navrepair.csv", &rows)?;
    Ok(Metrics::from([
        ("seeds".into(), rows.len() as f64),
        (
            "kf_within_half".into(),
            rows.iter().filter(|r| r.ratio <= 0.5).count() as f64,
        ),
        (
            "suites_green".into(),
            suites
                .iter()
                .filter(|s| s.deployed && s.tests_passed == s.tests_total)
                .count() as f64,
        ),
        ("suites".into(), suites.len() as f64),
    ]))
}

fn run_planning(c: &ScenarioConfig, binding: &ReasonerBinding, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    use experiments::planning::{
        reference_maps, run_grid_on, run_trial, summarize, trial_seed, PlannerMap, RESOLUTION,
    };
    let maps = if c.maps.is_empty() {
        reference_maps()?
    } else {
        c.maps
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let field = format!("maps[{i}]");
                let text = fs::read_to_string(p)?;
                let loaded =
                    GridMap::from_ascii(&text, RESOLUTION).map_err(|e| ScenarioError::field(&field, e.to_string()))?;
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
                PlannerMap::from_loaded(id, loaded).map_err(|e| ScenarioError::field(&field, e.to_string()))
            })
            .collect::<Result<_, ScenarioError>>()?
    };
    let mut rows = Vec::new();
    for (i, m) in maps.iter().enumerate() {
        for (k, &seed) in c.seeds.iter().enumerate() {
            let (row, _, bus) = run_trial(m, &c.perception, k as u32 + 1, trial_seed(seed, i), binding)?;
            w.trace(&format!("planning-{}-seed{seed}", m.id), &bus)?;
            rows.push(row);
        }
    }
    w.csv("planning.csv", &rows)?;
    let sums = summarize(&rows);
    w.csv("planning_summary.csv", &sums)?;
    let rate = |rs: &[crate::planner::EvalRow]| rs.iter().filter(|r| r.success).count() as f64 / rs.len().max(1) as f64;
    let mut m = Metrics::from([
        ("trials".into(), rows.len() as f64),
        ("success_rate".into(), rate(&rows)),
        (
            "min_map_success".into(),
            sums.iter().map(|s| s.success_rate).fold(f64::INFINITY, f64::min),
        ),
        (
            "max_map_success".into(),
            sums.iter().map(|s| s.success_rate).fold(f64::NEG_INFINITY, f64::max),
        ),
    ]);
    let mut prev = f64::INFINITY;
    let mut sweep_ok = true;
    for &miss in &c.miss_sweep {
        let p = PerceptionParams { miss, ..c.perception };
        let r = rate(&run_grid_on(&maps, &p, &c.seeds, binding)?);
        sweep_ok &= r <= prev;
        prev = r;
        m.insert(format!("sweep_success_{miss}"), r);
    }
    if !c.miss_sweep.is_empty() {
        m.insert("sweep_non_increasing".into(), flag(sweep_ok));
    }
    Ok(m)
}

fn run_interpretation(c: &ScenarioConfig, binding: &ReasonerBinding, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    use experiments::interpretation::run_prompt;
    let reference = reference_prompts();
    let prompts: Vec<(String, Vec<crate::mission::Task>)> = if c.commands.is_empty() {
        reference.iter().map(|(p, t)| (p.to_string(), t.clone())).collect()
    } else {
        c.commands
            .iter()
            .map(|p| {
                let known = reference
                    .iter()
                    .find(|(r, _)| r == p)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_default();
                (p.clone(), known)
            })
            .collect()
    };
    let seed = c.seeds[0];
    let mut rows = Vec::new();
    for (i, (p, want)) in prompts.iter().enumerate() {
        let (row, bus) = run_prompt(p, want, seed, binding)?;
        w.trace(&format!("interpretation-{:02}-seed{seed}", i + 1), &bus)?;
        rows.push(row);
    }
    w.csv("interpretation.csv", &rows)?;
    let direct = rows.iter().find(|r| r.prompt == "Inspect goal 2");
    let mut m = Metrics::from([
        ("prompts".into(), rows.len() as f64),
        (
            "matched".into(),
            rows.iter().filter(|r| r.expected_match).count() as f64,
        ),
        (
            "fully_planned".into(),
            rows.iter().filter(|r| r.fully_planned()).count() as f64,
        ),
        (
            "avoid_successes".into(),
            rows.iter().map(|r| r.avoid_successes).sum::<usize>() as f64,
        ),
        (
            "avoid_tasks".into(),
            rows.iter().map(|r| r.avoid_tasks).sum::<usize>() as f64,
        ),
    ]);
    if let Some(d) = direct {
        m.insert("direct_planned_collision".into(), flag(d.planned_collisions > 0));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct WorldRow {
    seed: u64,
    tick: u64,
    vehicle: String,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    issue: String,
}

fn run_world(c: &ScenarioConfig, binding: &ReasonerBinding, w: &mut Writer) -> Result<Metrics, ScenarioError> {
    let ticks = c.ticks.unwrap_or(100);
    let dt = c.world.dt;
    let mut rows = Vec::new();
    let (mut reports, mut blocked) = (0usize, 0usize);
    for &seed in &c.seeds {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut world = World::new(seed);
        world.current = c.world.current;
        world.pipeline = c.world.pipeline.clone();
        let mut bus = Bus::new(registry_with_intents(&[]), seed);
        let mut agents = Vec::new();
        let mut maneuvers = Vec::new();
        for v in &c.vehicles {
            let mut state = VehicleState::at(v.position[0], v.position[1], v.position[2]);
            state.yaw = v.yaw;
            world
                .add_vehicle(Vehicle::new(&v.id, v.kind, state))
                .map_err(ExperimentError::from)?;
            bus.register_participant(&v.id)?;
            let agent = Agent::instantiate(
                &mut bus,
                diagnostics_spec(
                    &format!("diagnostics-{}", v.id),
                    binding.clone(),
                    &Thresholds::default(),
                ),
            )
            .map_err(ExperimentError::from)?;
            let sub = agent.subscription_ids()[0];
            agents.push((v.id.clone(), agent, sub, Vec::<Envelope>::new()));
            maneuvers.push(v.maneuver.then(|| Maneuver::seeded(&mut rng)));
        }
        let first = c.vehicles[0].id.clone();
        if let Some(d) = &c.disturbance {
            let id = d.vehicle.clone().unwrap_or_else(|| first.clone());
            world.disturbance = Some(Disturbance::new(&id, d.pulse, d.deviations[0], d.residual));
        }
        let mut sensors = Sensors::new(c.sensors);
        let mut logs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for tick in 0..ticks {
            for f in &c.faults {
                let id = f.vehicle.clone().unwrap_or_else(|| first.clone());
                if f.at_tick == tick {
                    world
                        .inject_fault(&id, &f.thrusters, f.kind)
                        .map_err(ExperimentError::from)?;
                }
                if f.clear_tick == Some(tick) {
                    world.clear_fault(&id, &f.thrusters).map_err(ExperimentError::from)?;
                }
            }
            for (v, m) in c.vehicles.iter().zip(&maneuvers) {
                match m {
                    Some(m) => world.command_wrench(&v.id, m.wrench(&world.allocation, world.clock())),
                    None => world.command(&v.id, v.twist),
                }
                .map_err(ExperimentError::from)?;
            }
            world.step(dt).map_err(ExperimentError::from)?;
            for v in &c.vehicles {
                let frame = sensors.sense(&world, &v.id, &mut rng).map_err(ExperimentError::from)?;
                let log = logs.entry(v.id.clone()).or_default();
                serde_json::to_writer(&mut *log, &frame.status.to_json())?;
                log.push(b'\n');
                bus.publish(Message::new(VEHICLE_STATUS, &v.id, frame.status.to_json()).with_stamp(frame.status.t))?;
            }
            bus.tick(dt)?;
            for (vid, agent, sub, window) in agents.iter_mut() {
                for env in bus.drain(*sub)? {
                    if &env.publisher_id == vid {
                        if window.len() == WINDOW {
                            window.remove(0);
                        }
                        window.push(env);
                    }
                }
                let out = agent.step(window, None);
                blocked += out.events.len();
                let mut issue = String::new();
                for m in out.outbox.iter().chain(out.events.iter()) {
                    bus.publish(m.clone())?;
                }
                if let Some(m) = out.outbox.first() {
                    reports += 1;
                    issue = m.payload["issue"].as_str().unwrap_or_default().to_string();
                }
                let s = world.vehicle(vid).map_err(ExperimentError::from)?.state;
                rows.push(WorldRow {
                    seed,
                    tick,
                    vehicle: vid.clone(),
                    x: s.pos[0],
                    y: s.pos[1],
                    z: s.pos[2],
                    yaw: s.yaw,
                    issue,
                });
            }
        }
        w.trace(&format!("world-seed{seed}"), &bus)?;
        for (vid, log) in &logs {
            w.put(&format!("status/{vid}-seed{seed}.jsonl"), log)?;
        }
    }
    w.csv("world.csv", &rows)?;
    Ok(Metrics::from([
        ("ticks".into(), ticks as f64),
        ("vehicles".into(), c.vehicles.len() as f64),
        ("reports".into(), reports as f64),
        ("blocked".into(), blocked as f64),
        (
            "faulty_reports".into(),
            rows.iter()
                .filter(|r| !r.issue.is_empty() && r.issue != "ISSUE: none")
                .count() as f64,
        ),
    ]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayOutcome {
    pub entries: usize,
    pub subscriptions: usize,
    pub matched: bool,
    pub mismatches: Vec<String>,
}

/// Replays a trace on a fresh bus rebuilt from its sidecar and compares
/// every inbox digest with the recorded ones.
pub fn replay_file(trace_path: &Path) -> Result<ReplayOutcome, ScenarioError> {
    let trace = Trace::read_jsonl(BufReader::new(fs::File::open(trace_path)?))?;
    let meta_path = sidecar_path(trace_path);
    let meta: TraceMeta = serde_json::from_slice(&fs::read(&meta_path).map_err(|_| ScenarioError::MissingPath {
        field: "trace sidecar".into(),
        path: meta_path.clone(),
    })?)?;
    let ids: Vec<&str> = meta.intents.iter().map(String::as_str).collect();
    let mut bus = Bus::new(registry_with_intents(&ids), trace.header.seed);
    let entries = bus.replay_with(&trace, &meta.subscriptions)?;
    let got = bus.inbox_digests();
    let mut mismatches = Vec::new();
    for (k, v) in &meta.inbox_digests {
        if got.get(k) != Some(v) {
            mismatches.push(k.clone());
        }
    }
    for k in got.keys() {
        if !meta.inbox_digests.contains_key(k) {
            mismatches.push(k.clone());
        }
    }
    Ok(ReplayOutcome {
        entries,
        subscriptions: meta.subscriptions.len(),
        matched: mismatches.is_empty(),
        mismatches,
    })
}

/// Reads every `summary.json` below `dir`.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, ReportBundle)>, ScenarioError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&d)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "summary.json") {
                out.push((p.clone(), serde_json::from_slice(&fs::read(&p)?)?));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Files listed in a bundle whose current digest differs (or is missing).
pub fn verify_files(dir: &Path, bundle: &ReportBundle) -> Vec<String> {
    bundle
        .files
        .iter()
        .filter(|(rel, sha)| fs::read(dir.join(rel)).map(|b| &sha_file(&b) != *sha).unwrap_or(true))
        .map(|(rel, _)| rel.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIAG: &str = r#"
name = "diag"
experiment = "diagnostics"
seeds = [1]
ticks = 20

[[faults]]
thrusters = [2, 3]

[[assert]]
metric = "accuracy"
min = 1.0
"#;

    #[test]
    fn parse_reports_line_and_field() {
        let err = ScenarioConfig::parse(
            "name = \"x\"\nexperiment = \"diagnostics\"\nseeds = [1]\nbogus = 3\n",
            Path::new("."),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 4"), "{msg}");
        let err =
            ScenarioConfig::parse("name = \"x\"\nexperiment = \"planning\"\nseeds = []\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
    }

    #[test]
    fn missing_map_names_the_field() {
        let text = "name = \"p\"\nexperiment = \"planning\"\nseeds = [1]\nmaps = [\"nope.txt\"]\n";
        match ScenarioConfig::parse(text, Path::new("/nonexistent")) {
            Err(ScenarioError::MissingPath { field, .. }) => assert_eq!(field, "maps[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_twice_gives_identical_digests_and_replays() {
        let c = ScenarioConfig::parse(DIAG, Path::new(".")).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_scenario(&c, a.path()).unwrap();
        let rb = run_scenario(&c, b.path()).unwrap();
        assert!(ra.passed, "{ra:?}");
        assert_eq!(ra.report_digest(), rb.report_digest());
        assert!(verify_files(a.path(), &ra).is_empty());
        let r = replay_file(&a.path().join("traces/diagnostics-case1-seed1.jsonl")).unwrap();
        assert!(r.matched && r.entries > 0, "{r:?}");
        assert_eq!(collect_reports(a.path()).unwrap().len(), 1);
    }

    #[test]
    fn overrides_replace_seeds() {
        let mut c = ScenarioConfig::parse(DIAG, Path::new(".")).unwrap();
        Overrides {
            seed: Some(9),
            backend: None,
            ticks: Some(15),
        }
        .apply(&mut c)
        .unwrap();
        assert_eq!((c.seeds.clone(), c.ticks), (vec![9], Some(15)));
    }
}
