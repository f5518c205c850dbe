//! Two-vehicle deconfliction runs: intents exchanged on the bus, roles
//! negotiated, the yielder replans, and both vehicles fly their intents
//! in the simulator while true clearance is measured.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::ExperimentError;
use crate::agent::Constitution;
use crate::bus::{Bus, Message, SubscriptionId};
use crate::negotiation::{
    negotiate, radius_from_constitution, replan_yield, report, IntentMsg, ReplanKind, Role, Trajectory,
    DEFAULT_THRESHOLD,
};
use crate::planner::{Cell, GridMap};
use crate::sim::{Guidance, Obstacle, Vehicle, VehicleKind, VehicleState, World};
use crate::topics::{intent_topic, registry_with_intents, NEGOTIATION_EVENTS};

pub const DT: f64 = 0.1;
pub const MAP_SIZE: [f64; 2] = [20.0, 8.0];
pub const MAP_RES: f64 = 0.1;
/// Seconds simulated after both intents have ended.
const SETTLE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub id: &'static str,
    pub waypoints: Vec<[f64; 3]>,
    pub speed: f64,
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegScenario {
    pub name: &'static str,
    pub legs: [Leg; 2],
    /// Wall rectangles, (min, max).
    pub walls: Vec<([f64; 2], [f64; 2])>,
}

fn leg(id: &'static str, waypoints: &[[f64; 3]], speed: f64, t0: f64) -> Leg {
    Leg {
        id,
        waypoints: waypoints.to_vec(),
        speed,
        t0,
    }
}

pub fn scenarios() -> Vec<NegScenario> {
    let s = |name, a, b, walls| NegScenario {
        name,
        legs: [a, b],
        walls,
    };
    vec![
        s(
            "crossing",
            leg("A", &[[4.5, 4.0, 1.0], [11.5, 4.0, 1.0]], 0.5, 0.0),
            leg("B", &[[8.0, 0.5, 1.0], [8.0, 7.5, 1.0]], 0.5, 0.0),
            vec![],
        ),
        s(
            "oblique_crossing",
            leg("A", &[[3.0, 1.0, 1.0], [13.0, 7.0, 1.0]], 0.5, 0.0),
            leg("B", &[[3.0, 7.0, 1.0], [13.0, 1.0, 1.0]], 0.5, 0.0),
            vec![],
        ),
        s(
            "head_on_offset",
            leg("A", &[[18.0, 4.3, 1.0], [0.5, 4.3, 1.0]], 0.5, 0.0),
            leg("B", &[[2.0, 4.0, 1.0], [16.0, 4.0, 1.0]], 0.5, 0.0),
            vec![],
        ),
        s(
            "tight_corridor",
            leg("A", &[[18.0, 3.875, 1.0], [0.5, 3.875, 1.0]], 0.5, 0.0),
            leg("B", &[[2.0, 3.0, 1.0], [16.0, 3.0, 1.0]], 0.5, 0.0),
            vec![([0.0, 0.0], [20.0, 2.4]), ([0.0, 4.6], [20.0, 8.0])],
        ),
        s(
            "parallel_clear",
            leg("A", &[[2.0, 1.5, 1.0], [16.0, 1.5, 1.0]], 0.5, 0.0),
            leg("B", &[[2.0, 6.5, 1.0], [16.0, 6.5, 1.0]], 0.5, 0.0),
            vec![],
        ),
        s(
            "depth_separated",
            leg("A", &[[4.5, 4.0, 1.0], [11.5, 4.0, 1.0]], 0.5, 0.0),
            leg("B", &[[8.0, 0.5, 3.0], [8.0, 7.5, 3.0]], 0.5, 0.0),
            vec![],
        ),
        s(
            "converging",
            leg("A", &[[3.0, 1.0, 1.0], [9.0, 4.0, 1.0], [9.0, 7.5, 1.0]], 0.5, 0.0),
            leg("B", &[[2.0, 4.0, 1.0], [16.0, 4.0, 1.0]], 0.5, 0.0),
            vec![],
        ),
        s(
            "staggered_crossing",
            leg("A", &[[4.5, 4.0, 1.0], [11.5, 4.0, 1.0]], 0.5, 0.0),
            leg("B", &[[8.0, 0.1, 1.0], [8.0, 7.9, 1.0]], 0.7, 3.0),
            vec![],
        ),
    ]
}

pub fn grid_for(sc: &NegScenario) -> Result<GridMap, ExperimentError> {
    let w = (MAP_SIZE[0] / MAP_RES).round() as usize;
    let h = (MAP_SIZE[1] / MAP_RES).round() as usize;
    let mut g = GridMap::new(w, h, MAP_RES)?;
    for (lo, hi) in &sc.walls {
        for c in g.cells().collect::<Vec<Cell>>() {
            let p = g.cell_center(c);
            if p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1] {
                g.set(c, true);
            }
        }
    }
    Ok(g)
}

pub fn negotiator_constitution(radius: f64) -> Constitution {
    Constitution::new(
        "You are a vehicle agent. Share your intended trajectory and resolve predicted conflicts.",
        "intent",
    )
    .knowledge(&format!("bounding radius: {radius} m"))
    .guideline("the agent with the smaller id yields")
}

struct Negotiator {
    id: String,
    intent: IntentMsg,
    other: Option<IntentMsg>,
    sub: SubscriptionId,
    in_conflict: bool,
    dirty: bool,
    changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegRow {
    pub scenario: String,
    pub seed: u64,
    pub conflicts: usize,
    pub yields: usize,
    pub changed_a: usize,
    pub changed_b: usize,
    pub replan: String,
    pub negotiation_ticks: u64,
    pub negotiation_time_s: f64,
    pub predicted_d_star: f64,
    pub min_clearance: f64,
    pub collision_free: bool,
}

impl NegRow {
    /// Every conflict produced exactly one yield and one changed trajectory.
    pub fn one_yield_per_conflict(&self) -> bool {
        self.yields == self.conflicts && self.changed_a + self.changed_b == self.conflicts
    }
}

fn event(bus: &mut Bus, agent: &str, body: serde_json::Value) -> Result<(), ExperimentError> {
    let mut payload = json!({"agent": agent});
    if let (Some(p), Some(b)) = (payload.as_object_mut(), body.as_object()) {
        p.extend(b.clone());
    }
    bus.publish(Message::new(NEGOTIATION_EVENTS, agent, payload))?;
    Ok(())
}

/// Runs one scenario under one seed. The seed jitters speeds and start
/// times.
pub fn run_scenario(sc: &NegScenario, seed: u64) -> Result<(NegRow, Bus), ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&str> = sc.legs.iter().map(|l| l.id).collect();
    let mut bus = Bus::new(registry_with_intents(&ids), seed);
    let events_sub = bus.subscribe(NEGOTIATION_EVENTS, "harness")?;
    let grid = grid_for(sc)?;
    let mut world = World::new(seed);
    for (lo, hi) in &sc.walls {
        world.add_obstacle(Obstacle::rect("wall", *lo, *hi)?);
    }
    let radius = radius_from_constitution(&negotiator_constitution(0.4));
    let mut agents = Vec::new();
    for (k, l) in sc.legs.iter().enumerate() {
        let speed = l.speed * rng.random_range(0.95..1.05);
        let t0 = l.t0 + rng.random_range(0.0..0.3);
        let traj = Trajectory::constant_speed(&l.waypoints, t0, speed)?;
        let p = l.waypoints[0];
        world.add_vehicle(Vehicle::new(l.id, VehicleKind::Auv, VehicleState::at(p[0], p[1], p[2])))?;
        bus.register_participant(l.id)?;
        let other = sc.legs[1 - k].id;
        let sub = bus.subscribe(&intent_topic(other), l.id)?;
        agents.push(Negotiator {
            id: l.id.to_string(),
            intent: IntentMsg::new(l.id, traj, radius)?,
            other: None,
            sub,
            in_conflict: false,
            dirty: true,
            changes: 0,
        });
    }
    let guidance = Guidance {
        max_speed: 1.0,
        ..Guidance::default()
    };
    let end = agents
        .iter()
        .map(|a| a.intent.trajectory.end_time())
        .fold(0.0, f64::max);

    let mut conflicts = 0;
    let mut yields = 0;
    let mut replan = "none".to_string();
    let mut conflict_open: Option<u64> = None;
    let mut negotiation_ticks = 0;
    let mut min_clearance = f64::INFINITY;
    let mut horizon = end + SETTLE;
    loop {
        let t = bus.clock();
        let tick = bus.tick_index();
        for a in agents.iter_mut() {
            for env in bus.drain(a.sub)? {
                a.other = Some(IntentMsg::from_payload(&env.payload)?);
            }
        }
        for a in agents.iter_mut() {
            let Some(other) = a.other.clone() else { continue };
            let r = report(&a.intent, &other, t, DEFAULT_THRESHOLD)?;
            if r.conflicting && !a.in_conflict {
                let role = negotiate(&a.intent, &other)?;
                event(
                    &mut bus,
                    &a.id,
                    json!({"kind": "conflict", "other": other.agent_id, "t_star": r.t_star, "d_star": r.d_star}),
                )?;
                event(
                    &mut bus,
                    &a.id,
                    json!({"kind": "role", "other": other.agent_id, "role": role.as_str()}),
                )?;
                if role == Role::Yield {
                    let rp = replan_yield(&a.intent, &other, Some(&grid), t, DEFAULT_THRESHOLD)?;
                    let (kind, detail) = match rp.kind {
                        ReplanKind::Temporal { hold } => ("resolved", format!("temporal hold {hold} s")),
                        ReplanKind::Spatial => ("resolved", "spatial detour".to_string()),
                        ReplanKind::AbortHold => ("abort", "abort to hold".to_string()),
                    };
                    replan = detail.clone();
                    event(
                        &mut bus,
                        &a.id,
                        json!({"kind": kind, "other": other.agent_id, "d_star": rp.d_star, "detail": detail}),
                    )?;
                    a.intent.trajectory = rp.trajectory;
                    a.dirty = true;
                    a.changes += 1;
                }
            }
            a.in_conflict = r.conflicting;
        }
        if agents.iter().any(|a| a.in_conflict) {
            conflict_open.get_or_insert(tick);
        } else if let Some(start) = conflict_open.take() {
            negotiation_ticks += tick - start;
        }
        for a in agents.iter_mut() {
            if a.dirty {
                bus.publish(Message::new(&intent_topic(&a.id), &a.id, a.intent.to_payload()).with_stamp(t))?;
                a.dirty = false;
                horizon = horizon.max(a.intent.trajectory.end_time() + SETTLE);
            }
            let traj = &a.intent.trajectory;
            let target = traj.sample(t + DT);
            let v = traj.velocity(t);
            let state = world.vehicle(&a.id)?.state;
            world.command(&a.id, guidance.track(&state, target, [v[0], v[1]]))?;
        }
        world.step(DT)?;
        bus.tick(DT)?;
        let pa = world.vehicle(&agents[0].id)?.state.pos;
        let pb = world.vehicle(&agents[1].id)?.state.pos;
        let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
        min_clearance = min_clearance.min(d - agents[0].intent.radius - agents[1].intent.radius);
        if bus.clock() > horizon {
            break;
        }
    }
    if let Some(start) = conflict_open {
        negotiation_ticks += bus.tick_index() - start;
    }
    // Conflicts are counted from the role records: each conflict yields one
    // role record per agent at the same tick.
    let mut by_tick: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    let trace_ticks: Vec<(u64, String)> = bus
        .trace()
        .entries
        .iter()
        .filter(|(_, e)| e.topic == NEGOTIATION_EVENTS && e.payload["kind"] == "role")
        .map(|(k, e)| (*k, e.payload["role"].as_str().unwrap_or_default().to_string()))
        .collect();
    for (k, role) in trace_ticks {
        by_tick.entry(k).or_default().push(role);
    }
    for roles in by_tick.values() {
        conflicts += 1;
        yields += roles.iter().filter(|r| *r == "yield").count();
    }
    bus.drain(events_sub)?;
    let horizon_end = agents
        .iter()
        .map(|a| a.intent.trajectory.end_time())
        .fold(0.0, f64::max);
    let (_, predicted) = crate::negotiation::predict_between(
        &agents[0].intent.trajectory,
        &agents[1].intent.trajectory,
        radius,
        radius,
        0.0,
        horizon_end,
        crate::negotiation::SAMPLE_DT,
    )?;
    let row = NegRow {
        scenario: sc.name.to_string(),
        seed,
        conflicts,
        yields,
        changed_a: agents[0].changes,
        changed_b: agents[1].changes,
        replan,
        negotiation_ticks,
        negotiation_time_s: negotiation_ticks as f64 * DT,
        predicted_d_star: predicted,
        min_clearance,
        collision_free: min_clearance > 0.0,
    };
    Ok((row, bus))
}

pub fn run_all(seeds: &[u64]) -> Result<Vec<NegRow>, ExperimentError> {
    let mut rows = Vec::new();
    for sc in scenarios() {
        for &seed in seeds {
            rows.push(run_scenario(&sc, seed)?.0);
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[NegRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
