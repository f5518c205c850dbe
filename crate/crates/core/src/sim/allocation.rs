//! Thruster allocation for the vectored 8-thruster layout.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub type Wrench = [f64; 6];
pub type Efforts = [f64; 8];

pub const NEUTRAL_PWM: f64 = 1500.0;
pub const MIN_PWM: f64 = 1100.0;
pub const MAX_PWM: f64 = 1900.0;
pub const PWM_GAIN: f64 = 400.0;

/// Wrench row order.
pub const SURGE: usize = 0;
pub const SWAY: usize = 1;
pub const HEAVE: usize = 2;
pub const ROLL: usize = 3;
pub const PITCH: usize = 4;
pub const YAW: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationError {
    #[error("allocation matrix is rank deficient (rank {0} < 6)")]
    RankDeficient(usize),
    #[error("allocation matrix has non-finite entries")]
    NonFinite,
}

/// Thruster mounting geometry in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Horizontal thrusters: half-length and half-width of their mounting rectangle.
    pub lh: f64,
    pub wh: f64,
    /// Vertical thrusters.
    pub lv: f64,
    pub wv: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            lh: 0.156,
            wh: 0.111,
            lv: 0.12,
            wv: 0.218,
        }
    }
}

/// Maps per-thruster effort u ∈ ℝ⁸ to normalized body wrench τ = A·u.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationModel {
    a: SMatrix<f64, 6, 8>,
    pinv: SMatrix<f64, 8, 6>,
    pub gain: f64,
}

impl AllocationModel {
    /// Thrusters 0..3 horizontal at ±45°, 4..7 vertical.
    pub fn vectored(g: Geometry) -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let k = g.lh * c + g.wh * c;
        #[rustfmt::skip]
        let rows: [[f64; 8]; 6] = [
            [c, c, c, c, 0.0, 0.0, 0.0, 0.0],
            [c, -c, -c, c, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            [0.0, 0.0, 0.0, 0.0, -g.wv, g.wv, -g.wv, g.wv],
            [0.0, 0.0, 0.0, 0.0, -g.lv, -g.lv, g.lv, g.lv],
            [k, -k, k, -k, 0.0, 0.0, 0.0, 0.0],
        ];
        Self::from_rows(rows).expect("vectored layout has full row rank")
    }

    pub fn from_rows(rows: [[f64; 8]; 6]) -> Result<Self, AllocationError> {
        let a = SMatrix::<f64, 6, 8>::from_fn(|i, j| rows[i][j]);
        if a.iter().any(|x| !x.is_finite()) {
            return Err(AllocationError::NonFinite);
        }
        let svd = a.svd(true, true);
        let rank = svd.rank(1e-9);
        if rank < 6 {
            return Err(AllocationError::RankDeficient(rank));
        }
        let pinv = svd
            .pseudo_inverse(1e-12)
            .map_err(|_| AllocationError::RankDeficient(rank))?;
        Ok(Self {
            a,
            pinv,
            gain: PWM_GAIN,
        })
    }

    pub fn rows(&self) -> [[f64; 8]; 6] {
        let mut out = [[0.0; 8]; 6];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.a[(i, j)];
            }
        }
        out
    }

    pub fn pinv_rows(&self) -> [[f64; 6]; 8] {
        let mut out = [[0.0; 6]; 8];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.pinv[(i, j)];
            }
        }
        out
    }

    /// Unsaturated A⁺τ.
    pub fn efforts(&self, tau: &Wrench) -> Efforts {
        let u = self.pinv * SVector::<f64, 6>::from_column_slice(tau);
        let mut out = [0.0; 8];
        out.copy_from_slice(u.as_slice());
        out
    }

    pub fn wrench(&self, u: &Efforts) -> Wrench {
        let t = self.a * SVector::<f64, 8>::from_column_slice(u);
        let mut out = [0.0; 6];
        out.copy_from_slice(t.as_slice());
        out
    }

    /// Commanded PWM for a normalized wrench: 1500 + g·sat(A⁺τ).
    pub fn pwm_for_wrench(&self, tau: &Wrench) -> [f64; 8] {
        self.efforts(tau).map(|u| self.pwm_for_effort(u))
    }

    pub fn pwm_for_effort(&self, u: f64) -> f64 {
        NEUTRAL_PWM + self.gain * u.clamp(-1.0, 1.0)
    }

    pub fn effort_for_pwm(&self, pwm: f64) -> f64 {
        (pwm - NEUTRAL_PWM) / self.gain
    }
}

impl Default for AllocationModel {
    fn default() -> Self {
        Self::vectored(Geometry::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_on_actuated_wrench() {
        let m = AllocationModel::default();
        let tau = [0.3, -0.2, 0.1, 0.01, -0.02, 0.05];
        let back = m.wrench(&m.efforts(&tau));
        for i in 0..6 {
            assert!((back[i] - tau[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn neutral_and_saturation() {
        let m = AllocationModel::default();
        assert!(m.pwm_for_wrench(&[0.0; 6]).iter().all(|p| *p == NEUTRAL_PWM));
        let p = m.pwm_for_wrench(&[100.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p[..4].iter().all(|x| *x == MAX_PWM));
        let p = m.pwm_for_wrench(&[-100.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p[..4].iter().all(|x| *x == MIN_PWM));
    }

    #[test]
    fn rank_deficient_rejected() {
        let mut rows = AllocationModel::default().rows();
        rows[5] = rows[0];
        assert!(matches!(
            AllocationModel::from_rows(rows),
            Err(AllocationError::RankDeficient(_))
        ));
    }
}
