//! Thruster fault table: injected faults under active maneuvering, read
//! back through the diagnostics agent on the bus.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ExperimentError;
use crate::agent::{Agent, ReasonerBinding};
use crate::bus::{Bus, Envelope, Message, SubscriptionId};
use crate::diagnostics::{diagnostics_spec, labels_of, Diagnosis, FaultLabels, Thresholds, WINDOW};
use crate::sim::{
    AllocationModel, Efforts, Health, SensorConfig, Sensors, Vehicle, VehicleKind, VehicleState, World, Wrench,
    THRUSTERS,
};
use crate::topics::{standard_registry, VEHICLE_STATUS};

pub const DT: f64 = 0.1;
pub const SAMPLES: usize = 30;
pub const PWM_NOISE: f64 = 3.0;
const VEHICLE: &str = "auv0";

/// Fault sets of the test matrix, by case number.
pub const CONFIGS: [&[usize]; 5] = [&[], &[2], &[6], &[2, 3], &[2, 3, 6, 7]];

/// Per-seed phases and amplitudes of the maneuver.
#[derive(Debug, Clone, Copy)]
pub struct Maneuver {
    phase: [f64; 6],
    base: f64,
}

impl Maneuver {
    pub fn seeded(rng: &mut impl Rng) -> Self {
        let mut phase = [0.0; 6];
        for p in &mut phase {
            *p = rng.random_range(0.0..std::f64::consts::TAU);
        }
        Self {
            phase,
            base: rng.random_range(0.22..0.26),
        }
    }

    /// Per-thruster efforts: a dominant surge/heave term that reverses
    /// every two seconds, modulated by sway, yaw, roll and pitch terms.
    /// Every component stays within 0.17..0.33 in magnitude.
    pub fn efforts(&self, t: f64) -> Efforts {
        let p = &self.phase;
        let sq = |ph: f64| {
            if (std::f64::consts::FRAC_PI_2 * t + ph).sin() >= 0.0 {
                1.0
            } else {
                -1.0
            }
        };
        let s = sq(p[0]) * (self.base + 0.02 * (0.7 * t + p[1]).sin());
        let h = sq(p[1]) * (self.base + 0.02 * (0.6 * t + p[0]).sin());
        let w = 0.03 * (0.5 * t + p[2]).sin();
        let y = 0.03 * (0.9 * t + p[3]).cos();
        let r = 0.03 * (0.8 * t + p[4]).sin();
        let q = 0.03 * (0.4 * t + p[5]).cos();
        [
            s + w + y,
            s - w - y,
            s - w + y,
            s + w - y,
            h - r - q,
            h + r - q,
            h - r + q,
            h + r + q,
        ]
    }

    pub fn wrench(&self, alloc: &AllocationModel, t: f64) -> Wrench {
        alloc.wrench(&self.efforts(t))
    }
}

/// World, sensors and diagnostics agent wired on one bus.
pub struct DiagRig {
    pub bus: Bus,
    pub world: World,
    sensors: Sensors,
    rng: ChaCha8Rng,
    agent: Agent,
    inbox: SubscriptionId,
    window: VecDeque<Envelope>,
    maneuver: Maneuver,
    pub samples: usize,
}

impl DiagRig {
    pub fn new(seed: u64, binding: ReasonerBinding) -> Result<Self, ExperimentError> {
        let mut bus = Bus::new(standard_registry(), seed);
        let mut world = World::new(seed);
        world.add_vehicle(Vehicle::new(VEHICLE, VehicleKind::Auv, VehicleState::at(5.0, 5.0, 2.0)))?;
        let agent = Agent::instantiate(
            &mut bus,
            diagnostics_spec("diagnostics", binding, &Thresholds::default()),
        )?;
        let inbox = agent.subscription_ids()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maneuver = Maneuver::seeded(&mut rng);
        Ok(Self {
            bus,
            world,
            sensors: Sensors::new(SensorConfig {
                pwm_noise: PWM_NOISE,
                ..SensorConfig::default()
            }),
            rng,
            agent,
            inbox,
            window: VecDeque::with_capacity(WINDOW),
            maneuver,
            samples: 0,
        })
    }

    /// One control/sense/diagnose cycle. Returns the agent's diagnosis once
    /// a full window is available.
    pub fn sample(&mut self) -> Result<Option<FaultLabels>, ExperimentError> {
        let tau = self.maneuver.wrench(&self.world.allocation, self.world.clock());
        self.world.command_wrench(VEHICLE, tau)?;
        self.world.step(DT)?;
        let frame = self.sensors.sense(&self.world, VEHICLE, &mut self.rng)?;
        self.bus
            .publish(Message::new(VEHICLE_STATUS, VEHICLE, frame.status.to_json()).with_stamp(frame.status.t))?;
        self.bus.tick(DT)?;
        for env in self.bus.drain(self.inbox)? {
            if self.window.len() == WINDOW {
                self.window.pop_front();
            }
            self.window.push_back(env);
        }
        self.samples += 1;
        let inbox: Vec<Envelope> = self.window.iter().cloned().collect();
        let out = self.agent.step(&inbox, None);
        let mut labels = None;
        for m in out.outbox.iter().chain(out.events.iter()) {
            self.bus.publish(m.clone())?;
        }
        if let Some(m) = out.outbox.first() {
            labels = labels_of(&m.payload);
        }
        Ok(labels)
    }
}

pub fn expected_labels(faults: &[usize], kind: Health) -> FaultLabels {
    let mut l = FaultLabels::healthy();
    for &i in faults {
        l.0[i] = kind;
    }
    l
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagRow {
    pub case: usize,
    pub faults: String,
    pub trial: usize,
    pub seed: u64,
    pub issue: String,
    pub status: String,
    pub action: String,
    pub correct: bool,
}

fn ids(faults: &[usize]) -> String {
    if faults.is_empty() {
        "none".into()
    } else {
        faults.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

/// One trial: faults present from the start, diagnosis read after
/// `samples` samples ([`SAMPLES`] in the table).
pub fn run_trial(
    case: usize,
    faults: &[usize],
    trial: usize,
    seed: u64,
    binding: ReasonerBinding,
    samples: usize,
) -> Result<(DiagRow, Bus), ExperimentError> {
    let mut rig = DiagRig::new(seed, binding)?;
    rig.world.inject_fault(VEHICLE, faults, Health::Dead)?;
    let mut last = None;
    for _ in 0..samples {
        if let Some(l) = rig.sample()? {
            last = Some(l);
        }
    }
    let got = last.unwrap_or(FaultLabels([Health::OutOfRange; THRUSTERS]));
    let d = Diagnosis::from_labels(got);
    let row = DiagRow {
        case,
        faults: ids(faults),
        trial,
        seed,
        issue: d.issue,
        status: d.status,
        action: d.action,
        correct: last.is_some() && got == expected_labels(faults, Health::Dead),
    };
    Ok((row, rig.bus))
}

/// The full matrix: every config against every seed.
pub fn run_table(seeds: &[u64], binding: &ReasonerBinding) -> Result<Vec<DiagRow>, ExperimentError> {
    let mut rows = Vec::new();
    for (c, faults) in CONFIGS.iter().enumerate() {
        for (k, &seed) in seeds.iter().enumerate() {
            rows.push(run_trial(c + 1, faults, k + 1, seed, binding.clone(), SAMPLES)?.0);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub seed: u64,
    pub inject_at: usize,
    pub clear_at: usize,
    /// First sample (1-based) after injection from which every diagnosis
    /// names exactly the injected set, until clearing.
    pub faulty_from: Option<usize>,
    /// Same, for the healthy report after clearing.
    pub healthy_from: Option<usize>,
}

impl Transition {
    pub fn within(&self, bound: usize) -> bool {
        matches!(self.faulty_from, Some(f) if f - self.inject_at <= bound)
            && matches!(self.healthy_from, Some(h) if h - self.clear_at <= bound)
    }
}

/// Injects `faults` dead after sample `inject_at`, clears after `clear_at`.
pub fn run_transition(
    seed: u64,
    faults: &[usize],
    inject_at: usize,
    clear_at: usize,
    total: usize,
) -> Result<Transition, ExperimentError> {
    let mut rig = DiagRig::new(seed, ReasonerBinding::Template)?;
    let faulty = expected_labels(faults, Health::Dead);
    let mut history = Vec::with_capacity(total);
    for k in 1..=total {
        if k == inject_at + 1 {
            rig.world.inject_fault(VEHICLE, faults, Health::Dead)?;
        }
        if k == clear_at + 1 {
            rig.world.clear_fault(VEHICLE, faults)?;
        }
        history.push(rig.sample()?);
    }
    // settles_from: first k in (lo, hi] such that every sample k..=hi matches.
    let settles_from = |lo: usize, hi: usize, want: FaultLabels| -> Option<usize> {
        let mut first = None;
        for k in (lo + 1..=hi).rev() {
            if history[k - 1] == Some(want) {
                first = Some(k);
            } else {
                break;
            }
        }
        first
    };
    Ok(Transition {
        seed,
        inject_at,
        clear_at,
        faulty_from: settles_from(inject_at, clear_at, faulty),
        healthy_from: settles_from(clear_at, total, FaultLabels::healthy()),
    })
}

pub fn write_csv<W: Write>(rows: &[DiagRow], w: W) -> Result<(), csv::Error> {
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
    use crate::sim::NEUTRAL_PWM;

    #[test]
    fn maneuver_keeps_every_thruster_active_and_tracking() {
        let alloc = AllocationModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Maneuver::seeded(&mut rng);
        for k in 0..200 {
            let t = k as f64 * DT;
            let u = m.efforts(t);
            let back = alloc.efforts(&m.wrench(&alloc, t));
            for i in 0..THRUSTERS {
                assert!((back[i] - u[i]).abs() < 1e-9, "row-space round trip");
                let off = (alloc.pwm_for_effort(u[i]) - NEUTRAL_PWM).abs();
                assert!((50.0..150.0).contains(&off), "thruster {i} offset {off} at t={t}");
            }
        }
    }

    #[test]
    fn double_fault_trial_is_named() {
        let (row, _) = run_trial(4, &[2, 3], 1, 11, ReasonerBinding::Template, SAMPLES).unwrap();
        assert!(row.correct, "{row:?}");
        assert_eq!(row.issue, "ISSUE: thrusters 2,3 dead");
        assert_eq!(row.status, "STATUS: 6/8 thrusters nominal");
    }

    #[test]
    fn transition_flips_both_ways() {
        let tr = run_transition(5, &[2, 3], 20, 50, 70).unwrap();
        assert!(tr.within(WINDOW), "{tr:?}");
    }
}
