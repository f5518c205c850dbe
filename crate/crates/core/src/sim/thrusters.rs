use serde::{Deserialize, Serialize};

use super::allocation::NEUTRAL_PWM;

pub const THRUSTERS: usize = 8;
/// Offset applied to the observed PWM of an out-of-range thruster.
pub const OUT_OF_RANGE_BIAS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    #[default]
    Ok,
    Dead,
    OutOfRange,
}

impl Health {
    pub fn as_str(self) -> &'static str {
        match self {
            Health::Ok => "ok",
            Health::Dead => "dead",
            Health::OutOfRange => "out_of_range",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thruster {
    pub id: u8,
    pub pwm_cmd: f64,
    pub pwm_obs: f64,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrusterBank {
    pub thrusters: [Thruster; THRUSTERS],
}

impl Default for ThrusterBank {
    fn default() -> Self {
        Self {
            thrusters: std::array::from_fn(|i| Thruster {
                id: i as u8,
                pwm_cmd: NEUTRAL_PWM,
                pwm_obs: NEUTRAL_PWM,
                health: Health::Ok,
            }),
        }
    }
}

impl ThrusterBank {
    /// Sets commanded PWM; observed PWM follows each thruster's health.
    pub fn apply(&mut self, pwm_cmd: &[f64; THRUSTERS]) {
        for (t, &cmd) in self.thrusters.iter_mut().zip(pwm_cmd) {
            t.pwm_cmd = cmd;
            t.pwm_obs = observed(cmd, t.health);
        }
    }

    pub fn health(&self) -> [Health; THRUSTERS] {
        self.thrusters.map(|t| t.health)
    }

    pub fn pwm_cmd(&self) -> [f64; THRUSTERS] {
        self.thrusters.map(|t| t.pwm_cmd)
    }

    pub fn pwm_obs(&self) -> [f64; THRUSTERS] {
        self.thrusters.map(|t| t.pwm_obs)
    }
}

pub fn observed(cmd: f64, health: Health) -> f64 {
    match health {
        Health::Ok => cmd,
        Health::Dead => NEUTRAL_PWM,
        Health::OutOfRange => cmd + OUT_OF_RANGE_BIAS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrusterSample {
    pub id: u8,
    pub pwm_cmd: f64,
    pub pwm_obs: f64,
}

/// One status message as consumed by diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleStatus {
    pub t: f64,
    pub armed: bool,
    pub mode: String,
    pub thrusters: Vec<ThrusterSample>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatusError {
    #[error("expected {THRUSTERS} thruster entries, got {0}")]
    Count(usize),
    #[error("thruster entry {index} has id {id}")]
    Order { index: usize, id: u8 },
    #[error("non-finite pwm on thruster {0}")]
    NonFinite(u8),
    #[error("malformed status: {0}")]
    Malformed(String),
}

impl VehicleStatus {
    pub fn from_bank(t: f64, armed: bool, mode: &str, bank: &ThrusterBank) -> Self {
        Self {
            t,
            armed,
            mode: mode.to_string(),
            thrusters: bank
                .thrusters
                .iter()
                .map(|th| ThrusterSample {
                    id: th.id,
                    pwm_cmd: th.pwm_cmd,
                    pwm_obs: th.pwm_obs,
                })
                .collect(),
        }
    }

    pub fn check(&self) -> Result<(), StatusError> {
        if self.thrusters.len() != THRUSTERS {
            return Err(StatusError::Count(self.thrusters.len()));
        }
        for (i, s) in self.thrusters.iter().enumerate() {
            if s.id as usize != i {
                return Err(StatusError::Order { index: i, id: s.id });
            }
            if !s.pwm_cmd.is_finite() || !s.pwm_obs.is_finite() {
                return Err(StatusError::NonFinite(s.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("status serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, StatusError> {
        let s: Self = serde_json::from_value(v.clone()).map_err(|e| StatusError::Malformed(e.to_string()))?;
        s.check()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn health_models() {
        assert_eq!(observed(1700.0, Health::Ok), 1700.0);
        assert_eq!(observed(1700.0, Health::Dead), 1500.0);
        assert_eq!(observed(1700.0, Health::OutOfRange), 2000.0);
    }

    #[test]
    fn status_json_round_trip_and_checks() {
        let s = VehicleStatus::from_bank(1.5, true, "manual", &ThrusterBank::default());
        assert_eq!(VehicleStatus::from_json(&s.to_json()).unwrap(), s);
        let mut bad = s.clone();
        bad.thrusters.swap(0, 1);
        assert_eq!(bad.check(), Err(StatusError::Order { index: 0, id: 1 }));
        bad.thrusters.pop();
        assert_eq!(bad.check(), Err(StatusError::Count(7)));
    }
}
