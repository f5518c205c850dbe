//! Seeded experiment harnesses. Each one builds its own world, bus and
//! agents, runs to completion and returns plain result rows.

pub mod diagnostics;
pub mod interpretation;
pub mod navrepair;
pub mod negotiation;
pub mod planning;
pub mod recovery;
pub mod tuning;
pub mod twin;

use crate::agent::AgentError;
use crate::bus::BusError;
use crate::codesynth::SynthError;
use crate::memory::MemoryError;
use crate::mission::MissionError;
use crate::negotiation::NegotiationError;
use crate::planner::PlanError;
use crate::sim::SimError;
use crate::tuning::TuningError;

pub(crate) use crate::mission::mix;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Negotiation(#[from] NegotiationError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Setup(String),
}
