use serde::{Deserialize, Serialize};

/// Intelligent Driver Model constants. `desired_speed` is a default; each
/// simulated vehicle carries its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: f64,
    /// Braking limit, used as the emergency value when the gap closes.
    pub max_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 25.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
            max_decel: 9.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
            ("max_decel", self.max_decel),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("idm.{name} must be positive, got {v}"));
            }
        }
        if !(self.min_gap >= 0.0 && self.desired_speed > 0.0) {
            return Err("idm.min_gap must be >= 0 and idm.desired_speed > 0".into());
        }
        Ok(())
    }

    /// Dynamic desired gap `s*`.
    pub fn desired_gap(&self, speed: f64, approach_rate: f64) -> f64 {
        let brake_term = speed * approach_rate / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.min_gap + (speed * self.time_headway + brake_term).max(0.0)
    }
}

/// IDM acceleration of a follower at `speed` behind a leader `gap` metres
/// ahead (bumper to bumper) driving at `leader_speed`. Pass an infinite gap
/// for a free road. The result never falls below `-max_decel`.
pub fn idm_accel(speed: f64, desired_speed: f64, gap: f64, leader_speed: f64, params: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -params.max_decel;
    }
    let free = 1.0 - (speed.max(0.0) / desired_speed).powf(params.exponent);
    let interaction = if gap.is_finite() {
        (params.desired_gap(speed, speed - leader_speed) / gap).powi(2)
    } else {
        0.0
    };
    (params.max_accel * (free - interaction)).max(-params.max_decel)
}
