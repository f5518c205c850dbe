//! Deterministic 2.5D underwater world.
//!
//! Vehicles are kinematic rigid bodies (no drag, no added mass) driven by
//! the thrust their eight thrusters actually produce, which is derived from
//! the observed PWM. Depth is `z ≥ 0`; surface vehicles stay at `z = 0`.

mod allocation;
mod sensors;
mod thrusters;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use allocation::{
    AllocationError, AllocationModel, Efforts, Geometry, Wrench, HEAVE, MAX_PWM, MIN_PWM, NEUTRAL_PWM, PITCH, PWM_GAIN,
    ROLL, SURGE, SWAY, YAW,
};
pub use sensors::{Detection, SensorConfig, SensorFrame, Sensors};
pub use thrusters::{
    observed, Health, StatusError, Thruster, ThrusterBank, ThrusterSample, VehicleStatus, OUT_OF_RANGE_BIAS, THRUSTERS,
};

pub const DEFAULT_TETHER: f64 = 10.0;
pub const TETHER_MARGIN: f64 = 0.95;
pub const MAX_DT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("unknown vehicle `{0}`")]
    UnknownVehicle(String),
    #[error("vehicle `{0}` already exists")]
    DuplicateVehicle(String),
    #[error("thruster id {0} out of range 0..7")]
    BadThrusterId(usize),
    #[error("dt must lie in (0, {MAX_DT}], got {0}")]
    BadDt(f64),
    #[error("tether length must be positive, got {0}")]
    BadTether(f64),
    #[error("invalid obstacle: {0}")]
    BadObstacle(String),
}

/// Wraps to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

pub fn rotate(yaw: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Auv,
    Asv,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// x, y, depth.
    pub pos: [f64; 3],
    pub yaw: f64,
    /// Body-frame velocity through the water.
    pub vel: [f64; 3],
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            pos: [x, y, z],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia_z: f64,
    /// Thrust of one thruster at unit effort, N.
    pub thrust: f64,
    /// Velocity-loop gains per DOF (surge, sway, heave, roll, pitch, yaw), 1/s.
    pub kp: [f64; 6],
    /// Gain on the change of velocity error between successive commands.
    pub kd: [f64; 6],
    pub radius: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 20.0,
            inertia_z: 2.0,
            thrust: 20.0,
            kp: [3.0, 3.0, 3.0, 0.0, 0.0, 3.0],
            kd: [0.0; 6],
            radius: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: String,
    pub kind: VehicleKind,
    pub state: VehicleState,
    pub params: VehicleParams,
    pub bank: ThrusterBank,
    pub armed: bool,
    pub mode: String,
    /// Normalized wrench behind the current PWM command.
    pub last_wrench: Wrench,
    last_error: [f64; 6],
}

impl Vehicle {
    pub fn new(id: &str, kind: VehicleKind, state: VehicleState) -> Self {
        Self {
            id: id.to_string(),
            kind,
            state,
            params: VehicleParams::default(),
            bank: ThrusterBank::default(),
            armed: true,
            mode: "guided".into(),
            last_wrench: [0.0; 6],
            last_error: [0.0; 6],
        }
    }

    pub fn with_params(mut self, params: VehicleParams) -> Self {
        self.params = params;
        self
    }

    /// Body twist (vx, vy, vz, p, q, r).
    pub fn twist(&self) -> [f64; 6] {
        let s = &self.state;
        [s.vel[0], s.vel[1], s.vel[2], 0.0, 0.0, s.yaw_rate]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Disc { center: [f64; 2], radius: f64 },
    Box { min: [f64; 2], max: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub label: String,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Obstacle {
    pub fn disc(label: &str, center: [f64; 2], radius: f64) -> Result<Self, SimError> {
        if !(radius > 0.0) {
            return Err(SimError::BadObstacle(format!("radius {radius}")));
        }
        Ok(Self {
            label: label.into(),
            shape: Shape::Disc { center, radius },
        })
    }

    pub fn rect(label: &str, min: [f64; 2], max: [f64; 2]) -> Result<Self, SimError> {
        if !(min[0] < max[0] && min[1] < max[1]) {
            return Err(SimError::BadObstacle(format!("box {min:?}..{max:?}")));
        }
        Ok(Self {
            label: label.into(),
            shape: Shape::Box { min, max },
        })
    }

    pub fn center(&self) -> [f64; 2] {
        match self.shape {
            Shape::Disc { center, .. } => center,
            Shape::Box { min, max } => [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0],
        }
    }

    /// Distance from `p` to the obstacle boundary; negative inside.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match self.shape {
            Shape::Disc { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) - radius,
            Shape::Box { min, max } => {
                let dx = (min[0] - p[0]).max(p[0] - max[0]);
                let dy = (min[1] - p[1]).max(p[1] - max[1]);
                if dx <= 0.0 && dy <= 0.0 {
                    dx.max(dy)
                } else {
                    dx.max(0.0).hypot(dy.max(0.0))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulsePhase {
    Pulse,
    Residual,
}

/// Lateral current pulse that pushes one vehicle off the pipeline until it
/// reaches `deviation`, then decays to a residual current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub vehicle: String,
    pub pulse: [f64; 2],
    pub deviation: f64,
    pub residual: [f64; 2],
    pub phase: PulsePhase,
    /// Clock time the pulse ended, once it has.
    pub ended_at: Option<f64>,
}

impl Disturbance {
    pub fn new(vehicle: &str, pulse: [f64; 2], deviation: f64, residual: [f64; 2]) -> Self {
        Self {
            vehicle: vehicle.into(),
            pulse,
            deviation,
            residual,
            phase: PulsePhase::Pulse,
            ended_at: None,
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        match self.phase {
            PulsePhase::Pulse => self.pulse,
            PulsePhase::Residual => self.residual,
        }
    }
}

/// Signed lateral offset of `p` from a polyline; positive on the left.
pub fn lateral_error(pipeline: &[[f64; 2]], p: [f64; 2]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for w in pipeline.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if len2 == 0.0 {
            continue;
        }
        let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
        let side = d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0]);
        let signed = if side < 0.0 { -dist } else { dist };
        if best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, signed));
        }
    }
    best.map(|(_, s)| s)
}

/// Straight-line distance ≤ 0.95·L.
pub fn tether_feasible(asv: [f64; 3], auv: [f64; 3], length: f64) -> Result<bool, SimError> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(SimError::BadTether(length));
    }
    let d = ((asv[0] - auv[0]).powi(2) + (asv[1] - auv[1]).powi(2) + (asv[2] - auv[2]).powi(2)).sqrt();
    Ok(d <= TETHER_MARGIN * length)
}

#[derive(Debug, Clone)]
pub struct World {
    vehicles: BTreeMap<String, Vehicle>,
    obstacles: Vec<Obstacle>,
    pub pipeline: Vec<[f64; 2]>,
    pub tether_length: f64,
    /// Ambient world-frame current, m/s.
    pub current: [f64; 2],
    pub disturbance: Option<Disturbance>,
    pub allocation: AllocationModel,
    clock: f64,
    pub seed: u64,
}

impl World {
    pub fn new(seed: u64) -> Self {
        Self {
            vehicles: BTreeMap::new(),
            obstacles: Vec::new(),
            pipeline: Vec::new(),
            tether_length: DEFAULT_TETHER,
            current: [0.0; 2],
            disturbance: None,
            allocation: AllocationModel::default(),
            clock: 0.0,
            seed,
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn add_vehicle(&mut self, v: Vehicle) -> Result<(), SimError> {
        if self.vehicles.contains_key(&v.id) {
            return Err(SimError::DuplicateVehicle(v.id));
        }
        self.vehicles.insert(v.id.clone(), v);
        Ok(())
    }

    pub fn add_obstacle(&mut self, o: Obstacle) {
        self.obstacles.push(o);
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn vehicle(&self, id: &str) -> Result<&Vehicle, SimError> {
        self.vehicles.get(id).ok_or_else(|| SimError::UnknownVehicle(id.into()))
    }

    pub fn vehicle_mut(&mut self, id: &str) -> Result<&mut Vehicle, SimError> {
        self.vehicles
            .get_mut(id)
            .ok_or_else(|| SimError::UnknownVehicle(id.into()))
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.values()
    }

    /// Smallest obstacle clearance of a disc of `radius` at `p`.
    pub fn clearance(&self, p: [f64; 2], radius: f64) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance(p) - radius)
            .fold(f64::INFINITY, f64::min)
    }

    /// Velocity-loop command: PD on body-twist error, then allocation.
    pub fn command(&mut self, id: &str, twist: [f64; 6]) -> Result<(), SimError> {
        let v = self
            .vehicles
            .get_mut(id)
            .ok_or_else(|| SimError::UnknownVehicle(id.into()))?;
        let p = v.params;
        let cur = v.twist();
        let mut tau = [0.0; 6];
        let mut err = [0.0; 6];
        for i in 0..6 {
            err[i] = twist[i] - cur[i];
            let inertia = if i == YAW { p.inertia_z } else { p.mass };
            tau[i] = inertia * (p.kp[i] * err[i] + p.kd[i] * (err[i] - v.last_error[i])) / p.thrust;
        }
        v.last_error = err;
        Self::apply_wrench(&self.allocation, v, tau);
        Ok(())
    }

    /// Direct normalized-wrench command (bypasses the velocity loop).
    pub fn command_wrench(&mut self, id: &str, tau: Wrench) -> Result<(), SimError> {
        let v = self
            .vehicles
            .get_mut(id)
            .ok_or_else(|| SimError::UnknownVehicle(id.into()))?;
        Self::apply_wrench(&self.allocation, v, tau);
        Ok(())
    }

    fn apply_wrench(alloc: &AllocationModel, v: &mut Vehicle, tau: Wrench) {
        v.last_wrench = tau;
        v.bank.apply(&alloc.pwm_for_wrench(&tau));
    }

    pub fn inject_fault(&mut self, id: &str, thrusters: &[usize], kind: Health) -> Result<(), SimError> {
        if let Some(&bad) = thrusters.iter().find(|&&t| t >= THRUSTERS) {
            return Err(SimError::BadThrusterId(bad));
        }
        let v = self.vehicle_mut(id)?;
        for &t in thrusters {
            v.bank.thrusters[t].health = kind;
        }
        Ok(())
    }

    pub fn clear_fault(&mut self, id: &str, thrusters: &[usize]) -> Result<(), SimError> {
        self.inject_fault(id, thrusters, Health::Ok)
    }

    /// Ground-frame drift velocity acting on vehicle `id`.
    pub fn drift_velocity(&self, id: &str) -> [f64; 2] {
        let mut c = self.current;
        if let Some(d) = &self.disturbance {
            if d.vehicle == id {
                let dv = d.velocity();
                c = [c[0] + dv[0], c[1] + dv[1]];
            }
        }
        c
    }

    pub fn step(&mut self, dt: f64) -> Result<(), SimError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(SimError::BadDt(dt));
        }
        let ids: Vec<String> = self.vehicles.keys().cloned().collect();
        for id in ids {
            let drift = self.drift_velocity(&id);
            let alloc = &self.allocation;
            let v = self.vehicles.get_mut(&id).expect("id from keys");
            let u = v.bank.pwm_obs().map(|pwm| alloc.effort_for_pwm(pwm));
            let tau = alloc.wrench(&u);
            let p = v.params;
            let s = &mut v.state;
            let acc = [
                tau[SURGE] * p.thrust / p.mass,
                tau[SWAY] * p.thrust / p.mass,
                tau[HEAVE] * p.thrust / p.mass,
            ];
            let alpha = tau[YAW] * p.thrust / p.inertia_z;
            let v0 = s.vel;
            let mut v1 = [v0[0] + acc[0] * dt, v0[1] + acc[1] * dt, v0[2] + acc[2] * dt];
            let r0 = s.yaw_rate;
            let r1 = r0 + alpha * dt;
            let yaw0 = s.yaw;
            let yaw1 = yaw0 + 0.5 * (r0 + r1) * dt;
            let w0 = rotate(yaw0, [v0[0], v0[1]]);
            let w1 = rotate(yaw1, [v1[0], v1[1]]);
            s.pos[0] += 0.5 * (w0[0] + w1[0]) * dt + drift[0] * dt;
            s.pos[1] += 0.5 * (w0[1] + w1[1]) * dt + drift[1] * dt;
            match v.kind {
                VehicleKind::Asv => {
                    s.pos[2] = 0.0;
                    v1[2] = 0.0;
                }
                VehicleKind::Auv => {
                    s.pos[2] += 0.5 * (v0[2] + v1[2]) * dt;
                    if s.pos[2] < 0.0 {
                        s.pos[2] = 0.0;
                        v1[2] = v1[2].max(0.0);
                    }
                }
            }
            s.vel = v1;
            s.yaw_rate = r1;
            s.yaw = wrap_angle(yaw1);
        }
        self.clock += dt;
        self.update_disturbance();
        Ok(())
    }

    fn update_disturbance(&mut self) {
        let clock = self.clock;
        let Some(d) = self.disturbance.as_mut() else { return };
        if d.phase != PulsePhase::Pulse {
            return;
        }
        let Some(v) = self.vehicles.get(&d.vehicle) else { return };
        let p = [v.state.pos[0], v.state.pos[1]];
        if let Some(e) = lateral_error(&self.pipeline, p) {
            if e.abs() >= d.deviation {
                d.phase = PulsePhase::Residual;
                d.ended_at = Some(clock);
            }
        }
    }

    /// Overwrites a vehicle's pose (used by digital-twin injections).
    pub fn set_pose(&mut self, id: &str, pos: [f64; 3], yaw: f64) -> Result<(), SimError> {
        let v = self.vehicle_mut(id)?;
        v.state.pos = pos;
        v.state.yaw = wrap_angle(yaw);
        Ok(())
    }
}

/// Position-tracking guidance producing body twists for the velocity loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub k_pos: f64,
    pub max_speed: f64,
    pub k_yaw: f64,
    pub heading: f64,
}

impl Default for Guidance {
    fn default() -> Self {
        Self {
            k_pos: 1.0,
            max_speed: 0.5,
            k_yaw: 1.0,
            heading: 0.0,
        }
    }
}

impl Guidance {
    /// Twist that tracks `target` with world-frame feed-forward `ff`.
    pub fn track(&self, state: &VehicleState, target: [f64; 3], ff: [f64; 2]) -> [f64; 6] {
        let mut w = [
            ff[0] + self.k_pos * (target[0] - state.pos[0]),
            ff[1] + self.k_pos * (target[1] - state.pos[1]),
        ];
        let n = w[0].hypot(w[1]);
        if n > self.max_speed {
            w = [w[0] * self.max_speed / n, w[1] * self.max_speed / n];
        }
        let vz = (self.k_pos * (target[2] - state.pos[2])).clamp(-self.max_speed, self.max_speed);
        let b = rotate(-state.yaw, w);
        let r = -self.k_yaw * wrap_angle(state.yaw - self.heading);
        [b[0], b[1], vz, 0.0, 0.0, r]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world_with_auv() -> World {
        let mut w = World::new(1);
        w.add_vehicle(Vehicle::new("auv", VehicleKind::Auv, VehicleState::at(0.0, 0.0, 1.0)))
            .unwrap();
        w
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let mut w = world_with_auv();
        let before = w.vehicle("auv").unwrap().state;
        w.command("auv", [0.0; 6]).unwrap();
        for _ in 0..20 {
            w.step(0.1).unwrap();
        }
        assert_eq!(w.vehicle("auv").unwrap().state, before);
        assert!((w.clock() - 2.0).abs() < 1e-12);
        let v = w.vehicle("auv").unwrap();
        assert!(v
            .bank
            .thrusters
            .iter()
            .all(|t| t.pwm_cmd == 1500.0 && t.pwm_obs == 1500.0));
    }

    #[test]
    fn constant_surge_matches_closed_form() {
        let mut w = world_with_auv();
        let tau = [0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        w.command_wrench("auv", tau).unwrap();
        let p = w.vehicle("auv").unwrap().params;
        let a = 0.5 * p.thrust / p.mass;
        for _ in 0..10 {
            w.step(0.1).unwrap();
        }
        let x = w.vehicle("auv").unwrap().state.pos[0];
        assert!((x - 0.5 * a * 1.0).abs() < 1e-6, "x = {x}");
    }

    #[test]
    fn dead_thrusters_flatline() {
        let mut w = world_with_auv();
        w.inject_fault("auv", &[2, 3], Health::Dead).unwrap();
        w.command("auv", [0.3, 0.1, 0.0, 0.0, 0.0, 0.2]).unwrap();
        let v = w.vehicle("auv").unwrap();
        for t in [2, 3] {
            assert_eq!(v.bank.thrusters[t].pwm_obs, 1500.0);
            assert_ne!(v.bank.thrusters[t].pwm_cmd, 1500.0);
        }
        assert_eq!(
            w.inject_fault("auv", &[8], Health::Dead),
            Err(SimError::BadThrusterId(8))
        );
        assert!(matches!(w.command("ghost", [0.0; 6]), Err(SimError::UnknownVehicle(_))));
    }

    #[test]
    fn dt_bounds() {
        let mut w = world_with_auv();
        assert!(w.step(0.0).is_err());
        assert!(w.step(0.51).is_err());
        assert!(w.step(0.5).is_ok());
    }

    #[test]
    fn tether_examples() {
        assert!(tether_feasible([0.0; 3], [0.0; 3], 10.0).unwrap());
        assert!(!tether_feasible([0.0; 3], [10.0, 0.0, 0.0], 10.0).unwrap());
        assert!(tether_feasible([0.0; 3], [9.4, 0.0, 0.0], 10.0).unwrap());
        assert!(tether_feasible([0.0; 3], [0.0; 3], 0.0).is_err());
    }

    #[test]
    fn pulse_reaches_deviation() {
        for dev in [1.0, 1.5, 2.5] {
            let mut w = world_with_auv();
            w.pipeline = vec![[-50.0, 0.0], [50.0, 0.0]];
            w.disturbance = Some(Disturbance::new("auv", [0.0, 0.5], dev, [0.0, 0.03]));
            let mut peak: f64 = 0.0;
            for _ in 0..200 {
                w.command("auv", [0.0; 6]).unwrap();
                w.step(0.1).unwrap();
                let p = w.vehicle("auv").unwrap().state.pos;
                peak = peak.max(lateral_error(&w.pipeline, [p[0], p[1]]).unwrap().abs());
                if w.disturbance.as_ref().unwrap().phase == PulsePhase::Residual {
                    break;
                }
            }
            assert!(peak >= dev && peak < dev + 0.1, "dev {dev} peak {peak}");
        }
    }

    #[test]
    fn lateral_error_sign() {
        let line = [[0.0, 0.0], [10.0, 0.0]];
        assert_eq!(lateral_error(&line, [5.0, 2.0]), Some(2.0));
        assert_eq!(lateral_error(&line, [5.0, -1.0]), Some(-1.0));
        assert_eq!(lateral_error(&[], [0.0, 0.0]), None);
    }

    #[test]
    fn guidance_reaches_target() {
        let mut w = world_with_auv();
        let g = Guidance::default();
        for _ in 0..300 {
            let s = w.vehicle("auv").unwrap().state;
            w.command("auv", g.track(&s, [3.0, -2.0, 2.0], [0.0, 0.0])).unwrap();
            w.step(0.1).unwrap();
        }
        let p = w.vehicle("auv").unwrap().state.pos;
        assert!(
            (p[0] - 3.0).abs() < 0.05 && (p[1] + 2.0).abs() < 0.05 && (p[2] - 2.0).abs() < 0.05,
            "{p:?}"
        );
    }

    #[test]
    fn box_distance() {
        let b = Obstacle::rect("crate", [0.0, 0.0], [2.0, 2.0]).unwrap();
        assert_eq!(b.distance([1.0, 1.0]), -1.0);
        assert_eq!(b.distance([3.0, 1.0]), 1.0);
        assert!((b.distance([5.0, 6.0]) - 5.0).abs() < 1e-12);
        assert!(Obstacle::disc("x", [0.0, 0.0], 0.0).is_err());
    }
}
