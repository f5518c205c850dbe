//! Navigation self-repair: a DVL + compass filter is synthesized, tested
//! and hot-deployed, then compared against drifting dead reckoning.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::ExperimentError;
use crate::agent::TemplateBackend;
use crate::bus::{Bus, Message};
use crate::codesynth::{synthesize_and_deploy, DeployReport, NodeRequirement};
use crate::sim::{SensorConfig, Sensors, Vehicle, VehicleKind, VehicleState, World};
use crate::topics::{self, standard_registry, COMPASS, DVL, FUSED_NAV};

pub const DT: f64 = 0.1;
pub const DURATION: f64 = 200.0;
pub const ODOM_DRIFT: f64 = 0.05;
pub const DVL_SIGMA: f64 = 0.02;
pub const COMPASS_SIGMA: f64 = 0.01;
const VEHICLE: &str = "auv0";
const START: [f64; 3] = [5.0, 5.0, 2.0];

pub fn averaging_requirement() -> NodeRequirement {
    NodeRequirement::new(
        "stateful averaging filter",
        &[(topics::RAW_SCALAR, "scalar")],
        (topics::FILTERED_SCALAR, "scalar"),
    )
    .param("window", 10.0)
}

pub fn dual_odom_requirement() -> NodeRequirement {
    NodeRequirement::new(
        "kalman fuse two odometry sources",
        &[(topics::ODOM_A, "odometry"), (topics::ODOM_B, "odometry")],
        (topics::FUSED_ODOM, "pose_estimate"),
    )
}

pub fn dvl_compass_requirement(x0: f64, y0: f64, heading0: f64) -> NodeRequirement {
    NodeRequirement::new(
        "kalman filter fusing dvl and compass",
        &[(DVL, "dvl"), (COMPASS, "compass")],
        (FUSED_NAV, "nav_estimate"),
    )
    .param("x0", x0)
    .param("y0", y0)
    .param("heading0", heading0)
    .param("sigma_dvl", DVL_SIGMA)
    .param("sigma_compass", COMPASS_SIGMA)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthRow {
    pub kind: String,
    pub node_id: String,
    pub tests_passed: usize,
    pub tests_total: usize,
    pub deployed: bool,
    pub reason: String,
}

impl SynthRow {
    fn of(kind: &str, r: &DeployReport) -> Self {
        Self {
            kind: kind.into(),
            node_id: r.node_id.clone(),
            tests_passed: r.tests_passed,
            tests_total: r.tests_total,
            deployed: r.deployed,
            reason: r.reason.clone().unwrap_or_default(),
        }
    }
}

/// Synthesizes and deploys the three reference filters on a fresh bus.
pub fn synth_suites(dir: &Path) -> Result<Vec<SynthRow>, ExperimentError> {
    let mut bus = Bus::new(standard_registry(), 0);
    let mut rows = Vec::new();
    for (kind, id, req) in [
        ("averaging", "avg_filter", averaging_requirement()),
        ("dual_odom", "odom_fusion", dual_odom_requirement()),
        ("dvl_compass", "nav_kf", dvl_compass_requirement(0.0, 0.0, 0.0)),
    ] {
        let mut reasoner = TemplateBackend::standard("codesynth");
        let r = synthesize_and_deploy(&mut bus, id, &req, &mut reasoner, dir)?;
        rows.push(SynthRow::of(kind, &r));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NavRow {
    pub seed: u64,
    pub deployed: bool,
    pub tests_passed: usize,
    pub tests_total: usize,
    pub dead_reckoning_error: f64,
    pub kf_error: f64,
    pub ratio: f64,
}

/// Yaw-rate profile: slow S-turns.
fn yaw_rate(t: f64) -> f64 {
    0.06 * (0.04 * t).sin()
}

/// One seeded run: deploy the filter, fly S-turns for [`DURATION`] s and
/// compare final position errors.
pub fn run(seed: u64, dir: &Path) -> Result<(NavRow, Bus), ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::new(seed);
    world.add_vehicle(Vehicle::new(
        VEHICLE,
        VehicleKind::Auv,
        VehicleState::at(START[0], START[1], START[2]),
    ))?;
    let mut sensors = Sensors::new(SensorConfig {
        odom_drift: ODOM_DRIFT,
        dvl_sigma: DVL_SIGMA,
        compass_sigma: COMPASS_SIGMA,
        ..SensorConfig::default()
    });
    let mut bus = Bus::new(standard_registry(), seed);
    bus.register_participant(VEHICLE)?;
    let est_sub = bus.subscribe(FUSED_NAV, "harness")?;
    let mut reasoner = TemplateBackend::standard("codesynth");
    let report = synthesize_and_deploy(
        &mut bus,
        "nav_kf",
        &dvl_compass_requirement(START[0], START[1], 0.0),
        &mut reasoner,
        dir,
    )?;
    let mut last_est = None;
    let mut odom = [START[0], START[1]];
    let steps = (DURATION / DT).round() as usize;
    for _ in 0..steps {
        let t = world.clock();
        world.command(VEHICLE, [0.4, 0.0, 0.0, 0.0, 0.0, yaw_rate(t)])?;
        world.step(DT)?;
        let f = sensors.sense(&world, VEHICLE, &mut rng)?;
        odom = f.odom;
        let stamp = world.clock();
        bus.publish(Message::new(DVL, VEHICLE, json!({"vx": f.dvl[0], "vy": f.dvl[1]})).with_stamp(stamp))?;
        bus.publish(Message::new(COMPASS, VEHICLE, json!({"heading": f.compass})).with_stamp(stamp))?;
        bus.tick(DT)?;
        for env in bus.drain(est_sub)? {
            last_est = Some(env.payload);
        }
    }
    // one more tick flushes the estimate for the last sample.
    bus.tick(DT)?;
    for env in bus.drain(est_sub)? {
        last_est = Some(env.payload);
    }
    let truth = world.vehicle(VEHICLE)?.state.pos;
    let err = |p: [f64; 2]| (p[0] - truth[0]).hypot(p[1] - truth[1]);
    let dr = err(odom);
    let kf = match &last_est {
        Some(v) => err([v["x"].as_f64().unwrap_or(f64::NAN), v["y"].as_f64().unwrap_or(f64::NAN)]),
        None => f64::INFINITY,
    };
    Ok((
        NavRow {
            seed,
            deployed: report.deployed,
            tests_passed: report.tests_passed,
            tests_total: report.tests_total,
            dead_reckoning_error: dr,
            kf_error: kf,
            ratio: kf / dr,
        },
        bus,
    ))
}

pub fn run_seeds(seeds: &[u64], dir: &Path) -> Result<Vec<NavRow>, ExperimentError> {
    seeds.iter().map(|&s| run(s, dir).map(|(r, _)| r)).collect()
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_filters_pass_their_suites() {
        let dir = tempfile::tempdir().unwrap();
        for r in synth_suites(dir.path()).unwrap() {
            assert!(
                r.deployed && r.tests_passed == r.tests_total && r.tests_total > 0,
                "{r:?}"
            );
        }
    }

    #[test]
    fn deployed_filter_beats_dead_reckoning() {
        let dir = tempfile::tempdir().unwrap();
        let (row, bus) = run(3, dir.path()).unwrap();
        assert!(row.deployed, "{row:?}");
        assert!(bus.node_faults().is_empty(), "{:?}", bus.node_faults());
        assert!(row.kf_error < row.dead_reckoning_error, "{row:?}");
    }
}
