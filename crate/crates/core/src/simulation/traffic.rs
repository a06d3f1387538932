//! Surrounding traffic: IDM car following on lane centerlines, plus a
//! probabilistic gap-acceptance lane change executed as a linear blend.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idm::{idm_accel, IdmParams};
use crate::prediction::VehicleId;
use crate::road::LaneGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurroundLaneChangeParams {
    pub enabled: bool,
    pub probability_per_s: f64,
    /// Leader gap below which a vehicle considers itself blocked.
    pub blocked_gap: f64,
    /// Bumper clearance required to both new neighbours.
    pub clearance: f64,
    pub blend_s: f64,
    /// Deceleration the new follower may be forced into.
    pub safe_decel: f64,
}

impl Default for SurroundLaneChangeParams {
    fn default() -> Self {
        Self {
            enabled: true,
            probability_per_s: 0.3,
            blocked_gap: 25.0,
            clearance: 15.0,
            blend_s: 3.0,
            safe_decel: 3.0,
        }
    }
}

impl SurroundLaneChangeParams {
    pub fn frame_probability(&self, ts: f64) -> f64 {
        1.0 - (1.0 - self.probability_per_s).powf(ts)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.probability_per_s) {
            return Err(format!(
                "surround_lane_change.probability_per_s must lie in [0, 1], got {}",
                self.probability_per_s
            ));
        }
        if !(self.blend_s > 0.0 && self.clearance >= 0.0 && self.blocked_gap >= 0.0 && self.safe_decel > 0.0) {
            return Err("surround_lane_change distances and times must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneBlend {
    pub from: usize,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurroundVehicle {
    pub id: VehicleId,
    /// Current lane, or the destination while blending.
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
    pub accel: f64,
    pub desired_speed: f64,
    pub blend: Option<LaneBlend>,
}

impl SurroundVehicle {
    pub fn new(id: VehicleId, lane: usize, x: f64, speed: f64, desired_speed: f64) -> Self {
        Self { id, lane, x, speed, accel: 0.0, desired_speed, blend: None }
    }

    pub fn y(&self, geometry: &LaneGeometry, blend_s: f64) -> f64 {
        let to = geometry.centerline(self.lane);
        match self.blend {
            None => to,
            Some(b) => {
                let from = geometry.centerline(b.from);
                let f = (b.elapsed / blend_s).clamp(0.0, 1.0);
                from + f * (to - from)
            }
        }
    }

    pub fn lane_mask(&self) -> u32 {
        let mut m = 1 << self.lane;
        if let Some(b) = self.blend {
            m |= 1 << b.from;
        }
        m
    }

    pub fn body(&self) -> Body {
        Body { id: self.id, x: self.x, speed: self.speed, desired_speed: self.desired_speed, lanes: self.lane_mask() }
    }
}

/// Longitudinal footprint of any vehicle, the ego included, as seen by the
/// traffic model. `lanes` is a bit mask of occupied lanes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub id: VehicleId,
    pub x: f64,
    pub speed: f64,
    pub desired_speed: f64,
    pub lanes: u32,
}

impl Body {
    pub fn in_lane(&self, lane: usize) -> bool {
        self.lanes & (1 << lane) != 0
    }
}

/// Nearest body strictly ahead of `x` in `lane`.
pub fn leader_in(bodies: &[Body], lane: usize, x: f64, skip: VehicleId) -> Option<&Body> {
    bodies
        .iter()
        .filter(|b| b.id != skip && b.in_lane(lane) && b.x > x)
        .min_by(|a, b| a.x.total_cmp(&b.x))
}

/// Nearest body at or behind `x` in `lane`.
pub fn follower_in(bodies: &[Body], lane: usize, x: f64, skip: VehicleId) -> Option<&Body> {
    bodies
        .iter()
        .filter(|b| b.id != skip && b.in_lane(lane) && b.x <= x)
        .max_by(|a, b| a.x.total_cmp(&b.x))
}

/// Car-following acceleration: the tightest IDM response over every lane the
/// vehicle occupies.
pub fn following_accel(me: &Body, bodies: &[Body], lanes: usize, body_length: f64, idm: &IdmParams) -> f64 {
    let mut a = idm_accel(me.speed, me.desired_speed, f64::INFINITY, me.speed, idm);
    for lane in (0..lanes).filter(|&l| me.in_lane(l)) {
        if let Some(lead) = leader_in(bodies, lane, me.x, me.id) {
            a = a.min(idm_accel(me.speed, me.desired_speed, lead.x - me.x - body_length, lead.speed, idm));
        }
    }
    a
}

/// Gap-acceptance lane change. Returns the destination lane when the
/// vehicle starts a change this frame.
#[allow(clippy::too_many_arguments)]
pub fn surrounding_lane_change(
    vehicle: &SurroundVehicle,
    bodies: &[Body],
    geometry: &LaneGeometry,
    idm: &IdmParams,
    params: &SurroundLaneChangeParams,
    body_length: f64,
    ts: f64,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    if !params.enabled || vehicle.blend.is_some() {
        return None;
    }
    let lead = leader_in(bodies, vehicle.lane, vehicle.x, vehicle.id)?;
    let gap = lead.x - vehicle.x - body_length;
    if !(gap < params.blocked_gap && lead.speed < vehicle.desired_speed) {
        return None;
    }
    let acceptable = |lane: usize| {
        let front = leader_in(bodies, lane, vehicle.x, vehicle.id)
            .map_or(f64::INFINITY, |b| b.x - vehicle.x - body_length);
        let rear = follower_in(bodies, lane, vehicle.x, vehicle.id);
        let rear_gap = rear.map_or(f64::INFINITY, |b| vehicle.x - b.x - body_length);
        let rear_ok = rear.is_none_or(|b| {
            idm_accel(b.speed, b.desired_speed, rear_gap, vehicle.speed, idm) >= -params.safe_decel
        });
        front >= params.clearance && front > gap && rear_gap >= params.clearance && rear_ok
    };
    let options: Vec<usize> = [geometry.left_of(vehicle.lane), geometry.right_of(vehicle.lane)]
        .into_iter()
        .flatten()
        .filter(|&l| acceptable(l))
        .collect();
    if options.is_empty() || !rng.random_bool(params.frame_probability(ts)) {
        return None;
    }
    Some(if options.len() == 1 { options[0] } else { options[rng.random_range(0..options.len())] })
}
