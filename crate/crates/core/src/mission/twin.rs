//! Digital-twin curator: compares real sensing with the virtual state and
//! emits fidelity injections.

use serde::{Deserialize, Serialize};

use crate::memory::{window_slope, RingWindow, DEFAULT_WINDOW};
use crate::sim::{SensorFrame, SimError, VehicleState, World};

pub const POSE_THRESHOLD: f64 = 0.5;
pub const SLOPE_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionTarget {
    Pose,
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityInjection {
    pub target: InjectionTarget,
    /// New pose `[x, y]` for a pose reset; current increment for a current
    /// injection.
    pub correction: [f64; 2],
    /// Divergence (m) or divergence slope (m/s) that triggered it.
    pub cause: f64,
}

#[derive(Debug, Clone)]
pub struct TwinCurator {
    pub pose_threshold: f64,
    pub slope_threshold: f64,
    wx: RingWindow,
    wy: RingWindow,
}

impl Default for TwinCurator {
    fn default() -> Self {
        Self::new(POSE_THRESHOLD, SLOPE_THRESHOLD)
    }
}

impl TwinCurator {
    pub fn new(pose_threshold: f64, slope_threshold: f64) -> Self {
        Self {
            pose_threshold,
            slope_threshold,
            wx: RingWindow::with_capacity(DEFAULT_WINDOW).expect("positive capacity"),
            wy: RingWindow::with_capacity(DEFAULT_WINDOW).expect("positive capacity"),
        }
    }

    /// One curation step at time `t`. Non-increasing stamps are ignored.
    pub fn curate(&mut self, t: f64, real: &SensorFrame, virt: &VehicleState) -> Vec<FidelityInjection> {
        let d = [real.odom[0] - virt.pos[0], real.odom[1] - virt.pos[1]];
        let dist = d[0].hypot(d[1]);
        if dist > self.pose_threshold {
            self.wx.clear();
            self.wy.clear();
            return vec![FidelityInjection {
                target: InjectionTarget::Pose,
                correction: real.odom,
                cause: dist,
            }];
        }
        if self.wx.push(t, d[0]).is_err() || self.wy.push(t, d[1]).is_err() {
            return Vec::new();
        }
        if !self.wx.is_full() {
            return Vec::new();
        }
        let (Ok(sx), Ok(sy)) = (window_slope(&self.wx), window_slope(&self.wy)) else {
            return Vec::new();
        };
        let slope = sx.hypot(sy);
        if slope > self.slope_threshold {
            self.wx.clear();
            self.wy.clear();
            return vec![FidelityInjection {
                target: InjectionTarget::Current,
                correction: [sx, sy],
                cause: slope,
            }];
        }
        Vec::new()
    }
}

/// Applies injections to the twin world.
pub fn apply(twin: &mut World, vehicle: &str, injections: &[FidelityInjection]) -> Result<(), SimError> {
    for inj in injections {
        match inj.target {
            InjectionTarget::Pose => {
                let v = twin.vehicle(vehicle)?;
                let (z, yaw) = (v.state.pos[2], v.state.yaw);
                twin.set_pose(vehicle, [inj.correction[0], inj.correction[1], z], yaw)?;
            }
            InjectionTarget::Current => {
                twin.current[0] += inj.correction[0];
                twin.current[1] += inj.correction[1];
            }
        }
    }
    Ok(())
}
