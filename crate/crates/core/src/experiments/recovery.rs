//! Pipeline-following recovery after a lateral current pulse, with and
//! without the visual-temporal memory window.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use super::ExperimentError;
use crate::bus::{Bus, Message};
use crate::memory::{window_slope, MemoryRecord, RecordKind, RingWindow, VectorStore};
use crate::sim::{lateral_error, Disturbance, PulsePhase, Vehicle, VehicleKind, VehicleState, World};
use crate::topics::{standard_registry, LATERAL_ERROR};

pub const DT: f64 = 0.1;
pub const DEVIATIONS: [f64; 3] = [1.0, 1.5, 2.5];
pub const SURGE: f64 = 0.3;
pub const GAIN: f64 = 0.5;
pub const MAX_LATERAL: f64 = 0.6;
/// Recovered once |lateral error| is at or below this.
pub const TOLERANCE: f64 = 0.1;
const TIMEOUT: f64 = 120.0;
const VEHICLE: &str = "auv0";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRun {
    pub deviation: f64,
    pub direction: f64,
    pub seed: u64,
    pub memory: bool,
    /// Seconds from the end of the pulse to recovery.
    pub recovery_s: Option<f64>,
    pub peak_error: f64,
    /// Disturbance-rate estimate at recovery (memory variant only).
    pub rate_estimate: Option<f64>,
}

/// One run. The seed draws the pulse speed, the residual current and the
/// measurement noise; with and without memory see identical draws.
pub fn run(deviation: f64, direction: f64, seed: u64, memory: bool) -> Result<(RecoveryRun, Bus), ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pulse = rng.random_range(0.25..0.35) * direction;
    let residual = rng.random_range(0.035..0.045) * direction;
    let noise = Normal::new(0.0, 0.005).map_err(|e| ExperimentError::Setup(e.to_string()))?;

    let mut world = World::new(seed);
    world.pipeline = vec![[0.0, 0.0], [200.0, 0.0]];
    world.add_vehicle(Vehicle::new(VEHICLE, VehicleKind::Auv, VehicleState::at(1.0, 0.0, 2.0)))?;
    world.disturbance = Some(Disturbance::new(VEHICLE, [0.0, pulse], deviation, [0.0, residual]));
    let mut bus = Bus::new(standard_registry(), seed);
    bus.register_participant(VEHICLE)?;

    let mut window = RingWindow::default();
    let mut store = VectorStore::new();
    let mut commanded = 0.0;
    let mut peak: f64 = 0.0;
    let mut recovered = None;
    let mut estimate = None;
    loop {
        let t = world.clock();
        let pos = world.vehicle(VEHICLE)?.state.pos;
        let e = lateral_error(&world.pipeline, [pos[0], pos[1]]).unwrap_or(0.0) + noise.sample(&mut rng);
        peak = peak.max(e.abs());
        bus.publish(Message::new(LATERAL_ERROR, VEHICLE, json!({"error": e})).with_stamp(t))?;
        let d = world.disturbance.clone().expect("disturbance set");
        let mut v = 0.0;
        if memory {
            // the window holds the part of the error not explained by our
            // own commanded motion, so its slope is the drift rate.
            window
                .push(t, e - commanded)
                .map_err(|e| ExperimentError::Setup(e.to_string()))?;
            store.upsert(MemoryRecord::from_text(
                &format!("lateral-{}", bus.tick_index()),
                RecordKind::Observation,
                t,
                &format!("lateral error {e:.3} m at {t:.1} s"),
            )?);
        }
        if d.phase == PulsePhase::Residual {
            let end = d.ended_at.unwrap_or(t);
            if recovered.is_none() && e.abs() <= TOLERANCE {
                recovered = Some(((t - end) / DT).round() * DT);
                break;
            }
            if t - end > TIMEOUT {
                break;
            }
            v = -GAIN * e;
            if memory {
                if let Ok(rate) = window_slope(&window) {
                    estimate = Some(rate);
                    v -= rate;
                }
            }
            v = v.clamp(-MAX_LATERAL, MAX_LATERAL);
        }
        world.command(VEHICLE, [SURGE, v, 0.0, 0.0, 0.0, 0.0])?;
        let before = world.vehicle(VEHICLE)?.state.pos[1];
        world.step(DT)?;
        let after = world.vehicle(VEHICLE)?.state.pos[1];
        let drift = world.drift_velocity(VEHICLE)[1];
        commanded += (after - before) - drift * DT;
        bus.tick(DT)?;
    }
    Ok((
        RecoveryRun {
            deviation,
            direction,
            seed,
            memory,
            recovery_s: recovered,
            peak_error: peak,
            rate_estimate: estimate,
        },
        bus,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub deviation: f64,
    pub direction: f64,
    pub seed: u64,
    pub without_memory_s: f64,
    pub with_memory_s: f64,
    pub faster: bool,
}

pub fn run_matrix(seeds: &[u64]) -> Result<Vec<RecoveryRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &deviation in &DEVIATIONS {
        for direction in [1.0, -1.0] {
            for &seed in seeds {
                let base = run(deviation, direction, seed, false)?
                    .0
                    .recovery_s
                    .unwrap_or(f64::INFINITY);
                let mem = run(deviation, direction, seed, true)?
                    .0
                    .recovery_s
                    .unwrap_or(f64::INFINITY);
                rows.push(RecoveryRow {
                    deviation,
                    direction,
                    seed,
                    without_memory_s: base,
                    with_memory_s: mem,
                    faster: mem < base,
                });
            }
        }
    }
    Ok(rows)
}

/// Mean recovery time per deviation, (without, with).
pub fn means(rows: &[RecoveryRow]) -> Vec<(f64, f64, f64)> {
    DEVIATIONS
        .iter()
        .map(|&d| {
            let sel: Vec<&RecoveryRow> = rows.iter().filter(|r| r.deviation == d).collect();
            let n = sel.len().max(1) as f64;
            (
                d,
                sel.iter().map(|r| r.without_memory_s).sum::<f64>() / n,
                sel.iter().map(|r| r.with_memory_s).sum::<f64>() / n,
            )
        })
        .collect()
}

/// Both times increase with deviation for every (direction, seed).
pub fn monotone(rows: &[RecoveryRow]) -> bool {
    rows.iter().all(|r| {
        rows.iter()
            .filter(|o| o.direction == r.direction && o.seed == r.seed && o.deviation > r.deviation)
            .all(|o| o.without_memory_s > r.without_memory_s && o.with_memory_s > r.with_memory_s)
    })
}

pub fn write_csv<W: Write>(rows: &[RecoveryRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
