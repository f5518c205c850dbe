//! Standard schemas and topic names shared by the agents in this crate.

use crate::bus::{FieldKind as K, FieldSpec as F, Kinematic, SchemaRegistry, TopicSchema};

pub const SAFETY_EVENTS: &str = "safety/events";
pub const PLAN_REQUEST: &str = "plan/request";
pub const PLAN_PATH: &str = "plan/path";
pub const CMD_VELOCITY: &str = "cmd/velocity";
pub const VEHICLE_STATUS: &str = "vehicle/status";
pub const DIAGNOSTICS_REPORT: &str = "diagnostics/report";
pub const NEGOTIATION_EVENTS: &str = "negotiation/events";
pub const DETECTIONS: &str = "perception/detections";
pub const STUDENT_REPORT: &str = "student/report";
pub const SYNTH_REQUEST: &str = "synthesis/request";
pub const SYNTH_REPORT: &str = "synthesis/report";
pub const SYNTH_NODE_DEF: &str = "synthesis/node_def";
pub const RAW_SCALAR: &str = "sensors/raw";
pub const FILTERED_SCALAR: &str = "filters/avg";
pub const ODOM_A: &str = "sensors/odom_a";
pub const ODOM_B: &str = "sensors/odom_b";
pub const FUSED_ODOM: &str = "nav/fused_odom";
pub const DVL: &str = "sensors/dvl";
pub const COMPASS: &str = "sensors/compass";
pub const FUSED_NAV: &str = "nav/fused";
pub const LATERAL_ERROR: &str = "pipeline/lateral_error";
pub const MISSION_COMMAND: &str = "mission/command";
pub const MISSION_TASKS: &str = "mission/tasks";

pub fn intent_topic(agent_id: &str) -> String {
    format!("intent/{agent_id}")
}

fn schemas() -> Vec<TopicSchema> {
    vec![
        TopicSchema::new(
            "safety_event",
            vec![
                F::new("agent", K::Text),
                F::new("kind", K::Text).one_of(&["syntax", "schema", "limit", "backend_fault"]),
                F::new("detail", K::Text),
            ],
        ),
        TopicSchema::new(
            "waypoint_list",
            vec![
                F::new("waypoints", K::PointList).kinematic(Kinematic::Waypoints),
                F::new("speed", K::Number)
                    .range(0.0, f64::MAX)
                    .kinematic(Kinematic::Speed),
            ],
        ),
        TopicSchema::new(
            "velocity_cmd",
            vec![
                F::new("speed", K::Number).kinematic(Kinematic::Speed),
                F::new("heading", K::Number).range(-std::f64::consts::PI, std::f64::consts::PI),
                F::new("depth", K::Number).kinematic(Kinematic::Depth),
            ],
        ),
        TopicSchema::new(
            "plan_request",
            vec![
                F::new("start", K::Point),
                F::new("goal", K::Point),
                F::new("avoid", K::Bool),
                F::new("map", K::Text).optional(),
                F::new("resolution", K::Number).range(1e-6, 1e6).optional(),
                F::new("clearance", K::Integer).range(0.0, 100.0).optional(),
            ],
        ),
        TopicSchema::new(
            "vehicle_status",
            vec![
                F::new("t", K::Number),
                F::new("armed", K::Bool),
                F::new("mode", K::Text),
                F::new("thrusters", K::List),
            ],
        ),
        TopicSchema::new(
            "diagnosis",
            vec![
                F::new("issue", K::Text),
                F::new("status", K::Text),
                F::new("action", K::Text),
                F::new("labels", K::List),
            ],
        ),
        TopicSchema::new(
            "intent",
            vec![
                F::new("agent_id", K::Text),
                F::new("trajectory", K::List),
                F::new("radius", K::Number).range(1e-9, 1e6),
                F::new("priority", K::Text),
            ],
        ),
        TopicSchema::new(
            "negotiation_event",
            vec![
                F::new("kind", K::Text).one_of(&["conflict", "role", "resolved", "abort"]),
                F::new("agent", K::Text),
                F::new("other", K::Text),
                F::new("t_star", K::Number).optional(),
                F::new("d_star", K::Number).optional(),
                F::new("role", K::Text).one_of(&["yield", "proceed"]).optional(),
                F::new("detail", K::Text).optional(),
            ],
        ),
        TopicSchema::new("detections", vec![F::new("items", K::List)]),
        TopicSchema::new("scene_report", vec![F::new("text", K::Text)]),
        TopicSchema::new(
            "node_requirement",
            vec![
                F::new("kind", K::Text),
                F::new("inputs", K::List),
                F::new("output", K::List),
                F::new("params", K::Object),
            ],
        ),
        TopicSchema::new(
            "node_def",
            vec![
                F::new("nodes", K::List),
                F::new("edges", K::List),
                F::new("permissions", K::Object),
                F::new("caps", K::Object),
            ],
        ),
        TopicSchema::new(
            "synthesis_report",
            vec![
                F::new("node_id", K::Text),
                F::new("deployed", K::Bool),
                F::new("tests_passed", K::Integer),
                F::new("tests_total", K::Integer),
                F::new("generation_time_s", K::Number),
                F::new("reason", K::Text).optional(),
            ],
        ),
        TopicSchema::new("scalar", vec![F::new("value", K::Number)]),
        TopicSchema::new("odometry", vec![F::new("x", K::Number), F::new("y", K::Number)]),
        TopicSchema::new("dvl", vec![F::new("vx", K::Number), F::new("vy", K::Number)]),
        TopicSchema::new("compass", vec![F::new("heading", K::Number)]),
        TopicSchema::new(
            "nav_estimate",
            vec![
                F::new("x", K::Number),
                F::new("y", K::Number),
                F::new("psi", K::Number),
                F::new("vx", K::Number),
                F::new("vy", K::Number),
                F::new("p_trace", K::Number),
            ],
        ),
        TopicSchema::new(
            "pose_estimate",
            vec![
                F::new("x", K::Number),
                F::new("y", K::Number),
                F::new("p_trace", K::Number),
            ],
        ),
        TopicSchema::new("lateral_error", vec![F::new("error", K::Number)]),
        TopicSchema::new("mission_command", vec![F::new("text", K::Text)]),
        TopicSchema::new(
            "task_graph",
            vec![
                F::new("tasks", K::List),
                F::new("retry_budget", K::Integer).range(0.0, 100.0).optional(),
            ],
        ),
    ]
}

const BINDINGS: &[(&str, &str)] = &[
    (SAFETY_EVENTS, "safety_event"),
    (PLAN_REQUEST, "plan_request"),
    (PLAN_PATH, "waypoint_list"),
    (CMD_VELOCITY, "velocity_cmd"),
    (VEHICLE_STATUS, "vehicle_status"),
    (DIAGNOSTICS_REPORT, "diagnosis"),
    (NEGOTIATION_EVENTS, "negotiation_event"),
    (DETECTIONS, "detections"),
    (STUDENT_REPORT, "scene_report"),
    (SYNTH_REQUEST, "node_requirement"),
    (SYNTH_REPORT, "synthesis_report"),
    (SYNTH_NODE_DEF, "node_def"),
    (RAW_SCALAR, "scalar"),
    (FILTERED_SCALAR, "scalar"),
    (ODOM_A, "odometry"),
    (ODOM_B, "odometry"),
    (FUSED_ODOM, "pose_estimate"),
    (DVL, "dvl"),
    (COMPASS, "compass"),
    (FUSED_NAV, "nav_estimate"),
    (LATERAL_ERROR, "lateral_error"),
    (MISSION_COMMAND, "mission_command"),
    (MISSION_TASKS, "task_graph"),
];

/// Registry holding every standard schema and topic binding.
pub fn standard_registry() -> SchemaRegistry {
    let mut reg = SchemaRegistry::new();
    for s in schemas() {
        reg.register_schema(s).expect("standard schemas are well-formed");
    }
    for (topic, schema) in BINDINGS {
        reg.register_topic(topic, schema).expect("standard bindings resolve");
    }
    reg
}

/// Standard registry plus `intent/<id>` topics for the given agents.
pub fn registry_with_intents(agent_ids: &[&str]) -> SchemaRegistry {
    let mut reg = standard_registry();
    for id in agent_ids {
        reg.register_topic(&intent_topic(id), "intent")
            .expect("intent schema registered");
    }
    reg
}
