//! Pipeline following after a current pulse, with and without the memory of
//! past disturbance.

use agentic_auv::experiments::recovery::{means, monotone, run_matrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = run_matrix(&[1, 2, 3])?;
    for r in &rows {
        println!(
            "deviation {:.1} dir {:+} seed {}: without {:>6.1} s, with {:>6.1} s",
            r.deviation, r.direction, r.seed, r.without_memory_s, r.with_memory_s
        );
    }
    for (d, without, with) in means(&rows) {
        println!("mean at {d:.1} m: {without:.1} s -> {with:.1} s");
    }
    println!(
        "faster {}/{}, monotone {}",
        rows.iter().filter(|r| r.faster).count(),
        rows.len(),
        monotone(&rows)
    );
    Ok(())
}
