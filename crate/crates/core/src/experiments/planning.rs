//! Planner trials on reference maps under perception noise.

use serde::Serialize;

use super::{mix, ExperimentError};
use crate::agent::{Agent, ReasonerBinding, SafetyLimits};
use crate::bus::Bus;
use crate::planner::{
    agent_plan, astar, evaluate, perceive_map, planner_spec, EvalRow, GridMap, LoadedMap, Path, PerceptionParams,
};
use crate::topics::standard_registry;

pub const RESOLUTION: f64 = 0.5;
pub const CLEARANCE: usize = 2;
pub const DEPTH: f64 = 1.0;
pub const MISS_SWEEP: [f64; 3] = [0.0, 0.1, 0.3];

const MAPS: [(&str, &str); 5] = [
    (
        "pillars",
        include_str!("../../../../scenarios/maps/planner_pillars.txt"),
    ),
    ("gate", include_str!("../../../../scenarios/maps/planner_gate.txt")),
    (
        "scatter",
        include_str!("../../../../scenarios/maps/planner_scatter.txt"),
    ),
    ("wall", include_str!("../../../../scenarios/maps/planner_wall.txt")),
    ("slalom", include_str!("../../../../scenarios/maps/planner_slalom.txt")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerMap {
    pub id: String,
    pub truth: GridMap,
    pub start: [f64; 3],
    pub goal: [f64; 3],
}

impl PlannerMap {
    pub fn from_loaded(id: &str, loaded: LoadedMap) -> Result<Self, ExperimentError> {
        let (s, g) = match (loaded.start, loaded.goal) {
            (Some(s), Some(g)) => (s, g),
            _ => return Err(ExperimentError::Setup(format!("map `{id}` needs S and G glyphs"))),
        };
        let at = |c| {
            let p = loaded.map.cell_center(c);
            [p[0], p[1], DEPTH]
        };
        Ok(Self {
            id: id.into(),
            start: at(s),
            goal: at(g),
            truth: loaded.map,
        })
    }

    pub fn baseline(&self) -> Result<Path, ExperimentError> {
        let cell = |p: [f64; 3]| self.truth.cell_of([p[0], p[1]]).expect("endpoints on map");
        Ok(astar(&self.truth, cell(self.start), cell(self.goal), CLEARANCE, None)?)
    }

    fn limits(&self) -> SafetyLimits {
        SafetyLimits::tank(
            self.truth.width as f64 * self.truth.resolution,
            self.truth.height as f64 * self.truth.resolution,
            5.0,
            1.0,
        )
    }
}

pub fn reference_maps() -> Result<Vec<PlannerMap>, ExperimentError> {
    MAPS.iter()
        .map(|(id, text)| PlannerMap::from_loaded(id, GridMap::from_ascii(text, RESOLUTION)?))
        .collect()
}

/// One agent plan on a perceived map, scored on the truth map.
pub fn run_trial(
    m: &PlannerMap,
    perception: &PerceptionParams,
    trial: u32,
    seed: u64,
    binding: &ReasonerBinding,
) -> Result<(EvalRow, Path, Bus), ExperimentError> {
    let mut bus = Bus::new(standard_registry(), seed);
    let mut agent = Agent::instantiate(&mut bus, planner_spec("planner", binding.clone(), m.limits(), 0.4))?;
    let perceived = perceive_map(&m.truth, perception, seed);
    let baseline = m.baseline()?;
    let plan = agent_plan(&mut agent, &perceived, m.start, m.goal, CLEARANCE);
    let e = evaluate(plan.as_ref(), &m.truth, m.start, m.goal, &baseline);
    let row = EvalRow {
        map_id: m.id.clone(),
        trial,
        backend: match binding {
            ReasonerBinding::Template => "template",
            ReasonerBinding::Playback(_) => "playback",
            ReasonerBinding::Remote(_) => "remote",
        }
        .into(),
        success: e.success,
        final_error_m: e.final_error,
        error_delta_m: e.error_delta,
    };
    Ok((row, plan.unwrap_or(baseline), bus))
}

/// Every reference map against every seed.
pub fn run_grid(perception: &PerceptionParams, seeds: &[u64]) -> Result<Vec<EvalRow>, ExperimentError> {
    run_grid_on(&reference_maps()?, perception, seeds, &ReasonerBinding::Template)
}

/// Trial seeds are mixed with the map index so maps see independent noise.
pub fn trial_seed(seed: u64, map_index: usize) -> u64 {
    mix(seed, map_index as u64, 0)
}

pub fn run_grid_on(
    maps: &[PlannerMap],
    perception: &PerceptionParams,
    seeds: &[u64],
    binding: &ReasonerBinding,
) -> Result<Vec<EvalRow>, ExperimentError> {
    let mut rows = Vec::new();
    for (i, m) in maps.iter().enumerate() {
        for (k, &seed) in seeds.iter().enumerate() {
            rows.push(run_trial(m, perception, k as u32 + 1, trial_seed(seed, i), binding)?.0);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub map_id: String,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_error_delta_m: f64,
}

pub fn summarize(rows: &[EvalRow]) -> Vec<MapSummary> {
    let mut ids: Vec<&str> = rows.iter().map(|r| r.map_id.as_str()).collect();
    ids.dedup();
    ids.iter()
        .map(|id| {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.map_id == *id).collect();
            let n = sel.len() as f64;
            MapSummary {
                map_id: id.to_string(),
                trials: sel.len(),
                success_rate: sel.iter().filter(|r| r.success).count() as f64 / n,
                mean_error_delta_m: sel.iter().map(|r| r.error_delta_m).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Aggregate success rate for each miss probability, other noise at default.
pub fn miss_sweep(seeds: &[u64]) -> Result<Vec<(f64, f64)>, ExperimentError> {
    MISS_SWEEP
        .iter()
        .map(|&miss| {
            let p = PerceptionParams {
                miss,
                ..PerceptionParams::default()
            };
            let rows = run_grid(&p, seeds)?;
            let ok = rows.iter().filter(|r| r.success).count() as f64;
            Ok((miss, ok / rows.len() as f64))
        })
        .collect()
}

/// The agent's plan on an exactly perceived map costs the same as the
/// baseline, for every reference map.
pub fn zero_noise_matches_baseline() -> Result<Vec<(String, f64, f64)>, ExperimentError> {
    let mut out = Vec::new();
    for m in reference_maps()? {
        let (_, path, _) = run_trial(&m, &PerceptionParams::exact(), 0, 0, &ReasonerBinding::Template)?;
        out.push((m.id.clone(), path.cell_cost(), m.baseline()?.cell_cost()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_load_with_endpoints() {
        let maps = reference_maps().unwrap();
        assert_eq!(maps.len(), 5);
        for m in &maps {
            assert!(m.baseline().is_ok(), "{} {:?}", m.id, m.baseline());
        }
    }

    #[test]
    fn exact_perception_reproduces_baseline_cost() {
        for (id, got, want) in zero_noise_matches_baseline().unwrap() {
            assert_eq!(got, want, "{id}");
        }
    }
}
