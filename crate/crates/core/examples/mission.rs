//! Natural-language commands through the commander and planner agents, and
//! twin curation against an unmodeled current.

use agentic_auv::experiments::twin;
use agentic_auv::mission::{reference_prompts, tank_setup, Mission};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (prompt, _) in reference_prompts() {
        let mut m = Mission::new(tank_setup(1))?;
        let out = m.run(prompt)?;
        println!("{prompt}");
        for t in &out.tasks {
            println!(
                "  {:?} {} avoid={} planned={} planned_collision={} collided={} success={}",
                t.verb, t.goal, t.avoid_obstacles, t.planned, t.planned_collision, t.collided, t.success
            );
        }
    }
    for seed in 1..=3 {
        let r = twin::run(seed)?;
        println!(
            "twin seed {seed}: {} injections, divergence {:.3} m curated vs {:.3} m open loop",
            r.injections, r.curated_divergence, r.open_loop_divergence
        );
    }
    Ok(())
}
