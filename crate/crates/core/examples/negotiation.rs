//! Two crossing intents: conflict prediction, role assignment and the
//! yielding side's replan. Then the full scenario set for one seed.

use agentic_auv::experiments::negotiation::{run_scenario, scenarios};
use agentic_auv::negotiation::{
    negotiate, replan_yield, report, IntentMsg, Trajectory, DEFAULT_RADIUS, DEFAULT_THRESHOLD,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = IntentMsg::new(
        "auv0",
        Trajectory::constant_speed(&[[0.0, 5.0, 1.0], [10.0, 5.0, 1.0]], 0.0, 0.5)?,
        DEFAULT_RADIUS,
    )?;
    let b = IntentMsg::new(
        "auv1",
        Trajectory::constant_speed(&[[5.0, 0.0, 1.0], [5.0, 10.0, 1.0]], 0.0, 0.5)?,
        DEFAULT_RADIUS,
    )?;
    let r = report(&a, &b, 0.0, DEFAULT_THRESHOLD)?;
    println!(
        "predicted min clearance {:.2} m at t={:.1} s, conflict={}",
        r.d_star, r.t_star, r.conflicting
    );
    let (ra, rb) = (negotiate(&a, &b)?, negotiate(&b, &a)?);
    println!("auv0 {}, auv1 {}", ra.as_str(), rb.as_str());
    let (yielder, other) = if ra.as_str() == "yield" { (&a, &b) } else { (&b, &a) };
    let plan = replan_yield(yielder, other, None, 0.0, DEFAULT_THRESHOLD)?;
    println!(
        "{} replans {:?}, new clearance {:.2} m",
        yielder.agent_id, plan.kind, plan.d_star
    );

    for sc in scenarios() {
        let (row, _) = run_scenario(&sc, 1)?;
        println!(
            "{:<14} conflicts {} yields {} replan {:<10} min clearance {:.2} m",
            row.scenario, row.conflicts, row.yields, row.replan, row.min_clearance
        );
    }
    Ok(())
}
