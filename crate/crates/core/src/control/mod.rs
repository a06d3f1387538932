//! Trajectory control over the dynamic bicycle model.
//!
//! Each frame the controller minimises a tracking cost over a 5 s horizon of
//! `(acceleration, steering)` commands: speed and lateral-position tracking,
//! input magnitude and rate, and a linear hinge that grows once the gap to
//! the predicted leader drops below the safe distance. Input boxes are
//! enforced exactly; speed and road-edge limits are quadratic penalties.
//! A steep quadratic floor on the leader gap makes collision avoidance
//! outrank the speed floor.

mod maneuver;
mod solver;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BicycleState, ControlInput};

pub use maneuver::{maneuver_tracker, ManeuverError, ManeuverEvent, ManeuverPhase};
pub use solver::{solve_control, ControlProblem, ControlSolution, StateViolations, MIN_ROLLOUT_SPEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    pub speed_weight: f64,
    pub lateral_weight: f64,
    pub safety_weight: f64,
    pub steer_weight: f64,
    pub steer_rate_weight: f64,
    pub accel_weight: f64,
    pub accel_rate_weight: f64,
    pub v_ref: f64,
    pub safe_distance: f64,
    pub body_length: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub steer_max_deg: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub horizon: usize,
    pub block_len: usize,
    pub ts: f64,
    /// Quadratic penalty weight on the road-edge bounds.
    pub state_penalty: f64,
    /// Quadratic penalty weight on the speed window. Kept far below the
    /// others: in slow traffic the window is unreachable and must not
    /// outweigh lateral tracking.
    pub speed_penalty: f64,
    /// Bumper gap below which the collision floor applies.
    pub gap_floor: f64,
    pub gap_floor_penalty: f64,
    pub max_iterations: usize,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            speed_weight: 1.0,
            lateral_weight: 100.0,
            safety_weight: 500.0,
            steer_weight: 100_000.0,
            steer_rate_weight: 10_000.0,
            accel_weight: 1.0,
            accel_rate_weight: 50.0,
            v_ref: 27.0,
            safe_distance: 15.0,
            body_length: 5.0,
            speed_min: 20.0,
            speed_max: 30.0,
            y_min: -9.6,
            y_max: 0.0,
            steer_max_deg: 5.0,
            accel_min: -4.5,
            accel_max: 2.6,
            horizon: 50,
            block_len: 5,
            ts: 0.1,
            state_penalty: 1e4,
            speed_penalty: 100.0,
            gap_floor: 10.0,
            gap_floor_penalty: 1e8,
            max_iterations: 30,
        }
    }
}

impl ControlParams {
    pub fn steer_max(&self) -> f64 {
        self.steer_max_deg.to_radians()
    }

    pub fn block_count(&self) -> usize {
        self.horizon.div_ceil(self.block_len)
    }

    /// Project a command onto the input box.
    pub fn clamp_input(&self, input: ControlInput) -> ControlInput {
        let s = self.steer_max();
        ControlInput {
            accel: input.accel.clamp(self.accel_min, self.accel_max),
            steer: input.steer.clamp(-s, s),
        }
    }

    pub fn input_in_box(&self, input: &ControlInput) -> bool {
        let s = self.steer_max();
        input.accel >= self.accel_min && input.accel <= self.accel_max && input.steer >= -s && input.steer <= s
    }

    pub fn validate(&self) -> Result<(), String> {
        let weights = [
            ("speed_weight", self.speed_weight),
            ("lateral_weight", self.lateral_weight),
            ("safety_weight", self.safety_weight),
            ("steer_weight", self.steer_weight),
            ("steer_rate_weight", self.steer_rate_weight),
            ("accel_weight", self.accel_weight),
            ("accel_rate_weight", self.accel_rate_weight),
            ("state_penalty", self.state_penalty),
            ("speed_penalty", self.speed_penalty),
            ("gap_floor_penalty", self.gap_floor_penalty),
        ];
        for (name, w) in weights {
            if !(w >= 0.0) {
                return Err(format!("control.{name} must be non-negative, got {w}"));
            }
        }
        if !(self.speed_min < self.speed_max && self.y_min < self.y_max && self.accel_min < self.accel_max) {
            return Err("control bound intervals must be nonempty".into());
        }
        if !(self.steer_max_deg > 0.0 && self.ts > 0.0) {
            return Err("control.steer_max_deg and ts must be positive".into());
        }
        if self.horizon == 0 || self.block_len == 0 {
            return Err("control.horizon and block_len must be at least 1".into());
        }
        Ok(())
    }
}

/// Targets for one control solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlReference {
    pub y_ref: f64,
    /// Predicted leader centre positions at frames `t+1 ..`; `None` on a free road.
    pub leader_x: Option<Vec<f64>>,
    pub phase: ManeuverPhase,
}

impl ControlReference {
    pub fn free_road(y_ref: f64, phase: ManeuverPhase) -> Self {
        Self { y_ref, leader_x: None, phase }
    }

    /// Bumper gap to the leader at horizon step `k` (1-based), infinite without a leader.
    pub fn leader_gap(&self, k: usize, ego_x: f64, body_length: f64) -> f64 {
        match &self.leader_x {
            Some(xs) => {
                let x = xs.get(k - 1).or(xs.last()).copied().unwrap_or(f64::INFINITY);
                x - ego_x - body_length
            }
            None => f64::INFINITY,
        }
    }
}

/// Tracking cost of a rollout. `states[k]` is the state after applying
/// `inputs[k]`, so both slices have the horizon length.
pub fn control_stage_cost(
    states: &[BicycleState],
    inputs: &[ControlInput],
    reference: &ControlReference,
    params: &ControlParams,
) -> f64 {
    let mut j = 0.0;
    for (k, st) in states.iter().enumerate() {
        j += params.speed_weight * (st.u - params.v_ref).powi(2);
        j += params.lateral_weight * (st.y - reference.y_ref).powi(2);
        let gap = reference.leader_gap(k + 1, st.x, params.body_length);
        j += (params.safety_weight * (params.safe_distance - gap)).max(0.0);
    }
    for (k, inp) in inputs.iter().enumerate() {
        j += params.steer_weight * inp.steer.powi(2) + params.accel_weight * inp.accel.powi(2);
        if k > 0 {
            let prev = &inputs[k - 1];
            j += params.steer_rate_weight * (inp.steer - prev.steer).powi(2);
            j += params.accel_rate_weight * (inp.accel - prev.accel).powi(2);
        }
    }
    j
}

/// Penalty on the speed window, the road edges and the collision floor.
pub fn state_penalty(states: &[BicycleState], reference: &ControlReference, params: &ControlParams) -> f64 {
    let mut p = 0.0;
    for (k, st) in states.iter().enumerate() {
        let speed = (params.speed_min - st.u).max(0.0).powi(2) + (st.u - params.speed_max).max(0.0).powi(2);
        let lateral = (params.y_min - st.y).max(0.0).powi(2) + (st.y - params.y_max).max(0.0).powi(2);
        p += params.speed_penalty * speed + params.state_penalty * lateral;
        let gap = reference.leader_gap(k + 1, st.x, params.body_length);
        p += params.gap_floor_penalty * (params.gap_floor - gap).max(0.0).powi(2);
    }
    p
}
