//! Teacher/student tuning over every target class and scene.

use serde::Serialize;

use super::ExperimentError;
use crate::agent::ReasonerBinding;
use crate::bus::Bus;
use crate::topics::standard_registry;
use crate::tuning::{
    run_tuning, scenes, student_spec, EpisodeRecord, TargetSpec, TuningRow, TARGET_CLASSES, WORD_LIMIT,
};

pub const MAX_EPISODES: u32 = 10;
/// Episode by which every run must have converged.
pub const CONVERGE_BY: u32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningSummary {
    pub scene: u32,
    pub target_class: String,
    pub episodes: u32,
    pub first_relevance: f64,
    pub first_words: usize,
    /// First episode at 100 % relevance within the word limit.
    pub converged_at: Option<u32>,
    pub relevance_monotone: bool,
    pub words_monotone: bool,
}

impl TuningSummary {
    fn of(scene: u32, class: &str, recs: &[EpisodeRecord]) -> Self {
        Self {
            scene,
            target_class: class.into(),
            episodes: recs.len() as u32,
            first_relevance: recs.first().map_or(0.0, |r| r.relevance),
            first_words: recs.first().map_or(0, |r| r.word_count),
            converged_at: recs
                .iter()
                .find(|r| r.relevance >= 100.0 && r.word_count <= WORD_LIMIT)
                .map(|r| r.episode),
            relevance_monotone: recs.windows(2).all(|w| w[1].relevance >= w[0].relevance),
            words_monotone: recs.windows(2).all(|w| w[1].word_count <= w[0].word_count),
        }
    }

    pub fn passes(&self) -> bool {
        self.relevance_monotone && self.words_monotone && matches!(self.converged_at, Some(e) if e <= CONVERGE_BY)
    }
}

/// Runs every (scene, class) pair; scene 1 is the standard scene.
pub fn run_all(binding: &ReasonerBinding) -> Result<(Vec<TuningRow>, Vec<TuningSummary>, Bus), ExperimentError> {
    let mut bus = Bus::new(standard_registry(), 0);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (i, scene) in scenes().iter().enumerate() {
        let trial = i as u32 + 1;
        for class in TARGET_CLASSES {
            let target =
                TargetSpec::new(class).ok_or_else(|| ExperimentError::Setup(format!("unknown class {class}")))?;
            let id = format!("student-{trial}-{}", class.replace(' ', "-"));
            let recs = run_tuning(
                &mut bus,
                student_spec(&id, binding.clone()),
                scene,
                &target,
                MAX_EPISODES,
            )?;
            rows.extend(recs.iter().map(|r| TuningRow {
                trial,
                target_class: class.into(),
                episode: r.episode,
                words: r.word_count,
                relevance_pct: r.relevance,
                constitution_digest: r.constitution_digest.clone(),
            }));
            summaries.push(TuningSummary::of(trial, class, &recs));
        }
    }
    Ok((rows, summaries, bus))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pairs_converge() {
        let (rows, sums, _) = run_all(&ReasonerBinding::Template).unwrap();
        assert_eq!(sums.len(), 20);
        assert!(sums.iter().all(TuningSummary::passes), "{sums:?}");
        let first = &sums[0];
        assert_eq!((first.scene, first.target_class.as_str()), (1, "red ball"));
        assert!(first.first_relevance <= 20.0 && first.first_words >= 30, "{first:?}");
        assert!(rows.len() >= 20);
    }
}
