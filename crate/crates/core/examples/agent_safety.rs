//! A planner agent fed scripted replies: only the valid one is published,
//! every blocked reply becomes a labelled safety event.

use agentic_auv::agent::{validate_reply, Agent, ReasonerBinding, SafetyLimits};
use agentic_auv::bus::Bus;
use agentic_auv::planner::planner_spec;
use agentic_auv::topics::{standard_registry, PLAN_PATH};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pt = |x: f64, y: f64| format!(r#"{{"x": {x}, "y": {y}, "z": 1.0}}"#);
    let replies = vec![
        "sure, heading there now".to_string(),
        format!(r#"{{"waypoints": [{}]}}"#, pt(1.0, 1.0)),
        format!(r#"{{"waypoints": [{}, {}], "speed": 9.0}}"#, pt(1.0, 1.0), pt(2.0, 1.0)),
        format!(
            r#"{{"waypoints": [{}, {}], "speed": 0.3}}"#,
            pt(1.0, 1.0),
            pt(40.0, 1.0)
        ),
        format!(
            "```json\n{{\"waypoints\": [{}, {}], \"speed\": 0.3}}\n```",
            pt(1.0, 1.0),
            pt(3.0, 2.0)
        ),
    ];
    let limits = SafetyLimits::tank(10.0, 6.0, 5.0, 1.0);
    let mut bus = Bus::new(standard_registry(), 0);
    let mut agent = Agent::instantiate(
        &mut bus,
        planner_spec("planner", ReasonerBinding::Playback(replies.clone()), limits, 0.3),
    )?;

    let schema = bus.registry().topic_schema(PLAN_PATH).expect("plan topic").clone();
    for (i, text) in replies.iter().enumerate() {
        let verdict = match validate_reply(text, &schema, &limits) {
            Ok(_) => "accepted".to_string(),
            Err(v) => v.to_string(),
        };
        println!("reply {i}: {verdict}");
    }

    let (mut published, mut blocked) = (0, 0);
    for _ in &replies {
        let out = agent.step(&[], None);
        published += out.outbox.len();
        for e in &out.events {
            blocked += 1;
            println!("  event kind={} detail={}", e.payload["kind"], e.payload["detail"]);
        }
    }
    println!("published {published}, blocked {blocked}");
    Ok(())
}
