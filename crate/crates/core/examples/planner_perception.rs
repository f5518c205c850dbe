//! Plans on every reference map through noisy perception and prints the
//! per-map success rate plus one perceived map.

use agentic_auv::experiments::planning::{miss_sweep, reference_maps, run_grid, summarize, trial_seed};
use agentic_auv::planner::{perceive_map, PerceptionParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = (1..=5).collect();
    let rows = run_grid(&PerceptionParams::default(), &seeds)?;
    for s in summarize(&rows) {
        println!(
            "{:<8} success {:>4.0}%  mean error delta {:+.2} m",
            s.map_id,
            100.0 * s.success_rate,
            s.mean_error_delta_m
        );
    }
    for (miss, rate) in miss_sweep(&seeds)? {
        println!("miss {miss:.1}: success {:.0}%", 100.0 * rate);
    }

    let maps = reference_maps()?;
    let perceived = perceive_map(&maps[0].truth, &PerceptionParams::default(), trial_seed(1, 0));
    println!(
        "\n{} truth:\n{}\nperceived (seed 1):\n{}",
        maps[0].id,
        maps[0].truth.to_ascii(),
        perceived.to_ascii()
    );
    Ok(())
}
