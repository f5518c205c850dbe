//! Teacher-student constitution tuning over every scene and target class.

use agentic_auv::agent::ReasonerBinding;
use agentic_auv::experiments::tuning::run_all;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (rows, summaries, _) = run_all(&ReasonerBinding::Template)?;
    for s in &summaries {
        println!(
            "scene {} {:<12} first {:>5.1}% / {:>3} words, converged at {:?}",
            s.scene, s.target_class, s.first_relevance, s.first_words, s.converged_at
        );
    }
    println!(
        "{} episodes, {}/{} pairs pass",
        rows.len(),
        summaries.iter().filter(|s| s.passes()).count(),
        summaries.len()
    );
    Ok(())
}
