//! Natural-language commands through the commander, then planned and
//! flown in the tank.

use serde::Serialize;

use super::ExperimentError;
use crate::agent::ReasonerBinding;
use crate::bus::Bus;
use crate::mission::{reference_prompts, tank_setup, Mission, Task};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpRow {
    pub prompt: String,
    pub tasks: String,
    pub expected_match: bool,
    pub planned: usize,
    pub planned_collisions: usize,
    pub collisions: usize,
    pub avoid_successes: usize,
    pub avoid_tasks: usize,
    pub success: bool,
}

fn describe(tasks: &[Task]) -> String {
    tasks
        .iter()
        .map(|t| format!("{:?} {} avoid={}", t.verb, t.goal, t.avoid_obstacles))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Runs one prompt on a fresh tank.
pub fn run_prompt(
    prompt: &str,
    expected: &[Task],
    seed: u64,
    binding: &ReasonerBinding,
) -> Result<(InterpRow, Bus), ExperimentError> {
    let mut setup = tank_setup(seed);
    setup.binding = binding.clone();
    let mut m = Mission::new(setup)?;
    let graph = m.command(prompt)?;
    let o = m.orchestrate(prompt, &graph)?;
    let avoid: Vec<_> = o.tasks.iter().filter(|t| t.avoid_obstacles).collect();
    let row = InterpRow {
        prompt: prompt.into(),
        tasks: describe(&graph.tasks),
        expected_match: graph.tasks == expected,
        planned: o.tasks.iter().filter(|t| t.planned).count(),
        planned_collisions: o.tasks.iter().filter(|t| t.planned_collision).count(),
        collisions: o.tasks.iter().filter(|t| t.collided).count(),
        avoid_successes: avoid.iter().filter(|t| t.success).count(),
        avoid_tasks: avoid.len(),
        success: o.success,
    };
    Ok((row, m.bus))
}

pub fn run_all(seed: u64) -> Result<Vec<InterpRow>, ExperimentError> {
    reference_prompts()
        .iter()
        .map(|(p, want)| run_prompt(p, want, seed, &ReasonerBinding::Template).map(|(r, _)| r))
        .collect()
}

impl InterpRow {
    /// Every interpreted task got a plan on its first attempt.
    pub fn fully_planned(&self) -> bool {
        self.planned == self.tasks.split("; ").count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inspect_goal_two_flies_straight_into_the_wall() {
        let (p, want) = reference_prompts()
            .into_iter()
            .find(|(p, _)| *p == "Inspect goal 2")
            .unwrap();
        let (r, _) = run_prompt(p, &want, 1, &ReasonerBinding::Template).unwrap();
        assert!(r.expected_match && r.tasks.ends_with("avoid=false"), "{r:?}");
        assert_eq!(r.planned_collisions, 1);
    }
}
