//! The commander: mission interpretation, orchestration with reflection and
//! revision, the digital-twin curator and the scenario runner.

mod interpret;
pub mod twin;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use interpret::{
    commander_rule, interpret, reference_prompts, GoalTable, InterpretError, Task, TaskGraph, Verb,
    DEFAULT_RETRY_BUDGET,
};
pub use twin::{FidelityInjection, InjectionTarget, TwinCurator};

use crate::agent::{Agent, AgentError, AgentSpec, Constitution, ReasonerBinding, SafetyLimits};
use crate::bus::{Bus, BusError, Message, SubscriptionId};
use crate::planner::{
    perceive_map, planner_spec, swept_collision, waypoints_of, GridMap, PerceptionParams, PlanRequest, SUCCESS_RADIUS,
};
use crate::sim::{Guidance, Obstacle, SimError, Vehicle, VehicleKind, VehicleState, World};
use crate::topics::{self, registry_with_intents};

pub const VEHICLE: &str = "auv";
const ORCHESTRATOR: &str = "orchestrator";
const WAYPOINT_RADIUS: f64 = 0.2;
const ARRIVAL_RADIUS: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum MissionError {
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("goal `{0}` lies outside the workspace")]
    GoalOutside(String),
    #[error("commander produced no task graph")]
    NoTasks,
}

#[derive(Debug, Clone)]
pub struct MissionSetup {
    pub truth: GridMap,
    pub start: [f64; 3],
    pub goals: GoalTable,
    pub perception: PerceptionParams,
    pub clearance: usize,
    pub cruise_speed: f64,
    /// Radius of the vehicle disc checked against true obstacles, m.
    pub footprint: f64,
    pub dt: f64,
    pub seed: u64,
    pub binding: ReasonerBinding,
}

pub const TANK_MAP: &str = "\
....................
....................
....................
........###.........
........###.........
........###.........
........###.........
........###.........
........###.........
........###.........
....................
....................
";

/// 10 m × 6 m tank with one wall segment between the start and both goals.
pub fn tank_setup(seed: u64) -> MissionSetup {
    let truth = GridMap::from_ascii(TANK_MAP, 0.5).expect("tank map parses").map;
    MissionSetup {
        truth,
        start: [1.25, 2.75, 1.0],
        goals: GoalTable::new()
            .with("goal 1", [8.75, 4.75, 1.0])
            .with("goal 2", [8.75, 1.25, 1.0]),
        perception: PerceptionParams::exact(),
        clearance: 1,
        cruise_speed: 0.4,
        footprint: 0.1,
        dt: 0.1,
        seed,
        binding: ReasonerBinding::Template,
    }
}

pub fn commander_constitution(goals: &GoalTable) -> Constitution {
    let mut c = Constitution::new(
        "You are the Commander. Decompose the mission command into ordered sub-tasks for the specialist agents.",
        "task_graph",
    );
    for fact in goals.to_knowledge() {
        c = c.knowledge(&fact);
    }
    c.guideline("verbs: go to, inspect, check")
        .guideline("plan around obstacles only when the command mentions them")
}

fn limits(truth: &GridMap, speed: f64) -> SafetyLimits {
    SafetyLimits::tank(
        truth.origin[0] + truth.width as f64 * truth.resolution,
        truth.origin[1] + truth.height as f64 * truth.resolution,
        10.0,
        speed.max(1.0),
    )
}

/// Obstacles for the simulator, one box per occupied cell.
pub fn obstacles_from_grid(map: &GridMap) -> Vec<Obstacle> {
    map.occupied_cells()
        .into_iter()
        .map(|c| {
            let p = map.cell_center(c);
            let h = map.resolution / 2.0;
            Obstacle::rect(
                &format!("cell-{}-{}", c.0, c.1),
                [p[0] - h, p[1] - h],
                [p[0] + h, p[1] + h],
            )
            .expect("cell box is well-formed")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub trajectory: Vec<[f64; 3]>,
    pub collided: bool,
    pub final_pos: [f64; 3],
}

/// Tracks `waypoints` until arrival, a collision or the step budget runs out.
/// A collision leaves the vehicle at its last collision-free pose.
pub fn follow(
    world: &mut World,
    id: &str,
    waypoints: &[[f64; 3]],
    speed: f64,
    dt: f64,
    footprint: f64,
) -> Result<Execution, SimError> {
    let guidance = Guidance {
        max_speed: speed,
        ..Guidance::default()
    };
    let mut traj = vec![world.vehicle(id)?.state.pos];
    let length: f64 = waypoints
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum();
    let budget = ((3.0 * length / speed + 30.0) / dt).ceil() as usize;
    let mut idx = usize::from(waypoints.len() > 1);
    let mut collided = false;
    for _ in 0..budget {
        let Some(&target) = waypoints.get(idx) else { break };
        let s = world.vehicle(id)?.state;
        let dist = (target[0] - s.pos[0]).hypot(target[1] - s.pos[1]);
        let last = idx + 1 == waypoints.len();
        if !last && dist < WAYPOINT_RADIUS {
            idx += 1;
            continue;
        }
        if last && dist < ARRIVAL_RADIUS {
            break;
        }
        world.command(id, guidance.track(&s, target, [0.0, 0.0]))?;
        world.step(dt)?;
        let p = world.vehicle(id)?.state.pos;
        if world.clearance([p[0], p[1]], footprint) < 0.0 {
            collided = true;
            world.set_pose(id, s.pos, s.yaw)?;
            world.vehicle_mut(id)?.state.vel = [0.0; 3];
            break;
        }
        traj.push(p);
    }
    let final_pos = world.vehicle(id)?.state.pos;
    Ok(Execution {
        trajectory: traj,
        collided,
        final_pos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub index: usize,
    pub verb: Verb,
    pub goal: String,
    pub avoid_obstacles: bool,
    pub attempts: u32,
    pub retries: u32,
    /// A plan passed the safety parser on the first attempt.
    pub planned: bool,
    /// The first plan crosses a true obstacle.
    pub planned_collision: bool,
    pub collided: bool,
    pub final_distance: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionOutcome {
    pub command: String,
    pub graph: TaskGraph,
    pub tasks: Vec<TaskOutcome>,
    pub success: bool,
}

pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ b.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// A live mission: bus, simulated world, commander and planner agents.
pub struct Mission {
    pub setup: MissionSetup,
    pub bus: Bus,
    pub world: World,
    commander: Agent,
    planner: Agent,
    tasks_sub: SubscriptionId,
    path_sub: SubscriptionId,
}

impl Mission {
    pub fn new(setup: MissionSetup) -> Result<Self, MissionError> {
        let lim = limits(&setup.truth, setup.cruise_speed);
        for name in setup.goals.names() {
            let g = setup.goals.get(name).expect("name from table");
            if !lim.workspace.contains(g) {
                return Err(MissionError::GoalOutside(name.to_string()));
            }
        }
        let mut bus = Bus::new(registry_with_intents(&[]), setup.seed);
        let commander = Agent::instantiate(
            &mut bus,
            AgentSpec {
                agent_id: "commander".into(),
                role: "commander".into(),
                constitution: commander_constitution(&setup.goals),
                subscriptions: vec![topics::MISSION_COMMAND.into()],
                publications: vec![topics::MISSION_TASKS.into()],
                reasoner: setup.binding.clone(),
                limits: lim,
            },
        )?;
        let planner = Agent::instantiate(
            &mut bus,
            planner_spec("planner", setup.binding.clone(), lim, setup.cruise_speed),
        )?;
        let tasks_sub = bus.subscribe(topics::MISSION_TASKS, ORCHESTRATOR)?;
        let path_sub = bus.subscribe(topics::PLAN_PATH, ORCHESTRATOR)?;
        let mut world = World::new(setup.seed);
        for o in obstacles_from_grid(&setup.truth) {
            world.add_obstacle(o);
        }
        let s = setup.start;
        world.add_vehicle(Vehicle::new(
            VEHICLE,
            VehicleKind::Auv,
            VehicleState::at(s[0], s[1], s[2]),
        ))?;
        Ok(Self {
            setup,
            bus,
            world,
            commander,
            planner,
            tasks_sub,
            path_sub,
        })
    }

    /// Routes a command through the commander agent.
    pub fn command(&mut self, text: &str) -> Result<TaskGraph, MissionError> {
        self.bus.publish(Message::new(
            topics::MISSION_COMMAND,
            ORCHESTRATOR,
            json!({ "text": text }),
        ))?;
        self.bus.tick(self.setup.dt)?;
        self.commander.step_on_bus(&mut self.bus, None)?;
        self.bus.tick(self.setup.dt)?;
        let got = self.bus.drain(self.tasks_sub)?;
        got.last()
            .and_then(|e| TaskGraph::from_payload(&e.payload))
            .ok_or(MissionError::NoTasks)
    }

    fn request_plan(&mut self, req: &PlanRequest) -> Result<Option<Vec<[f64; 3]>>, MissionError> {
        self.bus
            .publish(Message::new(topics::PLAN_REQUEST, ORCHESTRATOR, req.to_payload()))?;
        self.bus.tick(self.setup.dt)?;
        let out = self.planner.step_on_bus(&mut self.bus, None)?;
        self.bus.tick(self.setup.dt)?;
        let got = self.bus.drain(self.path_sub)?;
        if !out.events.is_empty() {
            return Ok(None);
        }
        Ok(got.last().map(|e| waypoints_of(&e.payload)).filter(|w| w.len() >= 2))
    }

    fn run_task(&mut self, index: usize, task: &Task, budget: u32) -> Result<TaskOutcome, MissionError> {
        let goal = self
            .setup
            .goals
            .get(&task.goal)
            .ok_or_else(|| InterpretError::Unparseable(task.goal.clone()))?;
        let mut out = TaskOutcome {
            index,
            verb: task.verb,
            goal: task.goal.clone(),
            avoid_obstacles: task.avoid_obstacles,
            attempts: 0,
            retries: 0,
            planned: false,
            planned_collision: false,
            collided: false,
            final_distance: f64::INFINITY,
            success: false,
        };
        for attempt in 0..=budget {
            out.attempts = attempt + 1;
            out.retries = attempt;
            let origin = self.world.vehicle(VEHICLE)?.state.pos;
            let perceived = task.avoid_obstacles.then(|| {
                perceive_map(
                    &self.setup.truth,
                    &self.setup.perception,
                    mix(self.setup.seed, index as u64, attempt as u64),
                )
            });
            let req = PlanRequest {
                start: origin,
                goal,
                avoid: task.avoid_obstacles,
                map: perceived.as_ref().map(GridMap::to_ascii),
                resolution: Some(self.setup.truth.resolution),
                clearance: Some(self.setup.clearance),
            };
            let plan = self.request_plan(&req)?;
            let Some(waypoints) = plan else { continue };
            if attempt == 0 {
                out.planned = true;
                out.planned_collision = swept_collision(&self.setup.truth, &waypoints);
            }
            let ex = follow(
                &mut self.world,
                VEHICLE,
                &waypoints,
                self.setup.cruise_speed,
                self.setup.dt,
                self.setup.footprint,
            )?;
            out.collided |= ex.collided;
            out.final_distance = (ex.final_pos[0] - goal[0]).hypot(ex.final_pos[1] - goal[1]);
            out.success = out.final_distance <= SUCCESS_RADIUS && !(task.avoid_obstacles && ex.collided);
            if out.success {
                break;
            }
            if ex.collided && attempt < budget {
                // back out along the executed track before replanning
                let back: Vec<[f64; 3]> = ex.trajectory.iter().rev().step_by(5).copied().chain([origin]).collect();
                follow(
                    &mut self.world,
                    VEHICLE,
                    &back,
                    self.setup.cruise_speed,
                    self.setup.dt,
                    0.0,
                )?;
            }
        }
        Ok(out)
    }

    /// Executes every task in order; a failed task is recorded and the
    /// mission moves on.
    pub fn orchestrate(&mut self, command: &str, graph: &TaskGraph) -> Result<MissionOutcome, MissionError> {
        let mut tasks = Vec::new();
        for (i, t) in graph.tasks.iter().enumerate() {
            tasks.push(self.run_task(i, t, graph.retry_budget)?);
        }
        let success = tasks.iter().all(|t| t.success);
        Ok(MissionOutcome {
            command: command.into(),
            graph: graph.clone(),
            tasks,
            success,
        })
    }

    pub fn run(&mut self, command: &str) -> Result<MissionOutcome, MissionError> {
        let graph = self.command(command).map_err(|e| match e {
            MissionError::NoTasks => MissionError::Interpret(InterpretError::Unparseable(command.into())),
            other => other,
        })?;
        self.orchestrate(command, &graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avoid_task_succeeds_without_retries() {
        let mut m = Mission::new(tank_setup(1)).unwrap();
        let o = m.run("Go to goal 1 and check the obstacles on the way").unwrap();
        let t = &o.tasks[0];
        assert!(t.success, "{t:?}");
        assert_eq!(t.retries, 0);
        assert!(!t.planned_collision && !t.collided);
    }

    #[test]
    fn direct_task_plans_a_collision() {
        let mut m = Mission::new(tank_setup(1)).unwrap();
        let o = m.run("Inspect goal 2").unwrap();
        let t = &o.tasks[0];
        assert!(!t.avoid_obstacles);
        assert!(t.planned);
        assert!(t.planned_collision && t.collided);
        assert!(!t.success);
        assert_eq!(t.attempts, DEFAULT_RETRY_BUDGET + 1);
        assert!(!o.success);
    }

    #[test]
    fn unparseable_command() {
        let mut m = Mission::new(tank_setup(1)).unwrap();
        assert!(matches!(
            m.run("flurble the wug"),
            Err(MissionError::Interpret(InterpretError::Unparseable(_)))
        ));
    }

    #[test]
    fn missed_obstacle_forces_one_revision() {
        // find a perception seed whose first plan crosses the wall
        let noisy = PerceptionParams {
            sigma: 0.0,
            miss: 0.5,
            dilation: 0.0,
        };
        let seed = (0..200)
            .find(|&s| {
                let truth = tank_setup(s).truth;
                let first = perceive_map(&truth, &noisy, mix(s, 0, 0));
                let second = perceive_map(&truth, &noisy, mix(s, 0, 1));
                first.occupied_count() == 0 && second.occupied_count() > 0
            })
            .expect("an adversarial seed exists");
        let mut setup = tank_setup(seed);
        setup.perception = noisy;
        let mut m = Mission::new(setup).unwrap();
        let o = m.run("Go to goal 2 avoiding obstacles").unwrap();
        let t = &o.tasks[0];
        assert!(t.success, "{t:?}");
        assert_eq!(t.retries, 1);
        assert!(t.collided);
    }

    #[test]
    fn goals_must_be_inside_workspace() {
        let mut s = tank_setup(0);
        s.goals = s.goals.with("far", [50.0, 1.0, 1.0]);
        assert!(matches!(Mission::new(s), Err(MissionError::GoalOutside(_))));
    }
}
