//! Twin fidelity: a virtual world without the current follows a real one
//! with it, with and without curator injections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ExperimentError;
use crate::mission::twin::{apply, TwinCurator};
use crate::sim::{SensorConfig, Sensors, Vehicle, VehicleKind, VehicleState, World};

const VEHICLE: &str = "auv0";
const DT: f64 = 0.1;
pub const STEPS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinRow {
    pub seed: u64,
    pub current_x: f64,
    pub current_y: f64,
    pub injections: usize,
    /// Time-averaged real/twin position divergence, m.
    pub curated_divergence: f64,
    pub open_loop_divergence: f64,
}

fn world(seed: u64, current: [f64; 2]) -> Result<World, ExperimentError> {
    let mut w = World::new(seed);
    w.current = current;
    w.add_vehicle(Vehicle::new(VEHICLE, VehicleKind::Auv, VehicleState::at(1.0, 1.0, 1.0)))?;
    Ok(w)
}

fn gap(a: &World, b: &World) -> Result<f64, ExperimentError> {
    let (p, q) = (a.vehicle(VEHICLE)?.state.pos, b.vehicle(VEHICLE)?.state.pos);
    Ok((p[0] - q[0]).hypot(p[1] - q[1]))
}

/// Flies a slow surge in a seeded current and measures divergence.
pub fn run(seed: u64) -> Result<TwinRow, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let current = [rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06)];
    let mut real = world(seed, current)?;
    let mut curated = world(seed, [0.0; 2])?;
    let mut open = world(seed, [0.0; 2])?;
    let mut sensors = Sensors::new(SensorConfig {
        odom_drift: 0.002,
        ..SensorConfig::default()
    });
    let mut curator = TwinCurator::default();
    let (mut injections, mut sum_c, mut sum_o) = (0, 0.0, 0.0);
    for k in 1..=STEPS {
        let twist = [0.15, 0.0, 0.0, 0.0, 0.0, 0.02 * (0.05 * k as f64).sin()];
        for w in [&mut real, &mut curated, &mut open] {
            w.command(VEHICLE, twist)?;
            w.step(DT)?;
        }
        let frame = sensors.sense(&real, VEHICLE, &mut rng)?;
        let inj = curator.curate(k as f64 * DT, &frame, &curated.vehicle(VEHICLE)?.state);
        injections += inj.len();
        apply(&mut curated, VEHICLE, &inj)?;
        sum_c += gap(&real, &curated)?;
        sum_o += gap(&real, &open)?;
    }
    Ok(TwinRow {
        seed,
        current_x: current[0],
        current_y: current[1],
        injections,
        curated_divergence: sum_c / STEPS as f64,
        open_loop_divergence: sum_o / STEPS as f64,
    })
}
