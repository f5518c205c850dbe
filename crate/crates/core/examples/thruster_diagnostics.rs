//! Thruster fault diagnosis: a few table trials, then a fault injected and
//! cleared mid-run.

use agentic_auv::agent::ReasonerBinding;
use agentic_auv::experiments::diagnostics::{run_transition, run_trial};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (case, faults) in [(1, vec![]), (2, vec![5]), (3, vec![2, 3])] {
        let (row, _) = run_trial(case, &faults, 1, 7, ReasonerBinding::Template, 30)?;
        println!(
            "faults [{}] correct={}\n  {}\n  {}\n  {}",
            row.faults, row.correct, row.issue, row.status, row.action
        );
    }
    let t = run_transition(7, &[2, 3], 20, 50, 70)?;
    println!(
        "transition: faulty report from sample {:?} (injected after 20), healthy from {:?} (cleared after 50), within 10: {}",
        t.faulty_from,
        t.healthy_from,
        t.within(10)
    );
    Ok(())
}
