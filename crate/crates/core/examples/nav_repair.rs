//! Synthesizes the reference filters, then replaces dead reckoning with a
//! synthesized DVL + compass filter on a few seeds.

use agentic_auv::experiments::navrepair::{run, synth_suites};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("agentic-auv-nav-repair");
    std::fs::create_dir_all(&dir)?;
    for r in synth_suites(&dir)? {
        println!(
            "{:<12} {:<12} tests {}/{} deployed={}",
            r.kind, r.node_id, r.tests_passed, r.tests_total, r.deployed
        );
    }
    for seed in 1..=5 {
        let (r, _) = run(seed, &dir)?;
        println!(
            "seed {seed}: dead reckoning {:.2} m, filter {:.2} m, ratio {:.2}",
            r.dead_reckoning_error, r.kf_error, r.ratio
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}
