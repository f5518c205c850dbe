use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::thrusters::VehicleStatus;
use super::{wrap_angle, SimError, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Odometry random-walk drift, m/√s per axis.
    pub odom_drift: f64,
    pub dvl_sigma: f64,
    pub compass_sigma: f64,
    /// Half-angle of the camera field of view, rad.
    pub fov_half: f64,
    pub max_range: f64,
    pub p_fn: f64,
    /// Probability of one clutter detection per frame.
    pub p_fp: f64,
    /// Uniform ± noise on observed PWM, μs.
    pub pwm_noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            odom_drift: 0.0,
            dvl_sigma: 0.0,
            compass_sigma: 0.0,
            fov_half: std::f64::consts::FRAC_PI_3,
            max_range: 8.0,
            p_fn: 0.0,
            p_fp: 0.0,
            pwm_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    pub bearing: f64,
    pub range: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub status: VehicleStatus,
    pub odom: [f64; 2],
    pub dvl: [f64; 2],
    pub compass: f64,
    pub detections: Vec<Detection>,
}

/// Per-vehicle sensor state (the odometry drift accumulator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensors {
    pub config: SensorConfig,
    drift: [f64; 2],
    last_t: Option<f64>,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma positive and finite").sample(rng)
}

impl Sensors {
    pub fn new(config: SensorConfig) -> Self {
        Self {
            config,
            drift: [0.0; 2],
            last_t: None,
        }
    }

    pub fn drift(&self) -> [f64; 2] {
        self.drift
    }

    pub fn sense<R: Rng + ?Sized>(
        &mut self,
        world: &World,
        vehicle: &str,
        rng: &mut R,
    ) -> Result<SensorFrame, SimError> {
        let v = world.vehicle(vehicle)?;
        let cfg = self.config;
        let dt = self.last_t.map_or(0.0, |t| (world.clock() - t).max(0.0));
        self.last_t = Some(world.clock());
        let step_sigma = cfg.odom_drift * dt.sqrt();
        for d in &mut self.drift {
            *d += gauss(rng, step_sigma);
        }
        let s = &v.state;
        let odom = [s.pos[0] + self.drift[0], s.pos[1] + self.drift[1]];
        let dvl = [
            s.vel[0] + gauss(rng, cfg.dvl_sigma),
            s.vel[1] + gauss(rng, cfg.dvl_sigma),
        ];
        let compass = wrap_angle(s.yaw + gauss(rng, cfg.compass_sigma));

        let mut detections = Vec::new();
        for ob in world.obstacles() {
            let c = ob.center();
            let (dx, dy) = (c[0] - s.pos[0], c[1] - s.pos[1]);
            let range = dx.hypot(dy);
            let bearing = wrap_angle(dy.atan2(dx) - s.yaw);
            let draw: f64 = rng.random();
            if range > cfg.max_range || bearing.abs() > cfg.fov_half || draw < cfg.p_fn {
                continue;
            }
            detections.push(Detection {
                class: ob.label.clone(),
                bearing,
                range,
                confidence: (1.0 - 0.05 * range).clamp(0.1, 1.0),
            });
        }
        let clutter: f64 = rng.random();
        if clutter < cfg.p_fp {
            detections.push(Detection {
                class: "clutter".into(),
                bearing: rng.random_range(-cfg.fov_half..=cfg.fov_half),
                range: rng.random_range(0.5..=cfg.max_range.max(0.5)),
                confidence: 0.2,
            });
        }

        let mut status = VehicleStatus::from_bank(world.clock(), v.armed, &v.mode, &v.bank);
        if cfg.pwm_noise > 0.0 {
            for t in &mut status.thrusters {
                t.pwm_obs += rng.random_range(-cfg.pwm_noise..=cfg.pwm_noise);
            }
        }
        Ok(SensorFrame {
            status,
            odom,
            dvl,
            compass,
            detections,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::sim::{Obstacle, Vehicle, VehicleKind, VehicleState};

    fn world() -> World {
        let mut w = World::new(0);
        w.add_vehicle(Vehicle::new("auv", VehicleKind::Auv, VehicleState::at(1.0, 2.0, 1.0)))
            .unwrap();
        w.add_obstacle(Obstacle::disc("red ball", [4.0, 2.0], 0.2).unwrap());
        w.add_obstacle(Obstacle::disc("crate", [-3.0, 2.0], 0.5).unwrap());
        w
    }

    #[test]
    fn zero_noise_is_truth_and_fov_filters() {
        let mut w = world();
        let mut s = Sensors::new(SensorConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        w.step(0.1).unwrap();
        let f = s.sense(&w, "auv", &mut rng).unwrap();
        assert_eq!(f.odom, [1.0, 2.0]);
        assert_eq!(f.dvl, [0.0, 0.0]);
        assert_eq!(f.compass, 0.0);
        assert_eq!(f.detections.len(), 1);
        assert_eq!(f.detections[0].class, "red ball");
        assert!((f.detections[0].range - 3.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_frames_repeat() {
        let cfg = SensorConfig {
            odom_drift: 0.05,
            dvl_sigma: 0.02,
            compass_sigma: 0.01,
            p_fn: 0.3,
            p_fp: 0.5,
            pwm_noise: 2.0,
            ..SensorConfig::default()
        };
        let run = || {
            let mut w = world();
            let mut s = Sensors::new(cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..20)
                .map(|_| {
                    w.step(0.1).unwrap();
                    s.sense(&w, "auv", &mut rng).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
