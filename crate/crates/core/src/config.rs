//! Scenario configuration, read from JSON.
//!
//! Every key is optional; omitted keys take their default. A minimal file is
//! `{}`. Unknown keys are reported, and rejected in strict mode.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlParams;
use crate::decision::DecisionParams;
use crate::dynamics::BicycleParams;
use crate::prediction::PredictorKind;
use crate::road::LaneGeometry;
use crate::simulation::idm::IdmParams;
use crate::simulation::traffic::SurroundLaneChangeParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {source}")]
    Parse {
        origin: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{origin}: unknown keys {}", keys.join(", "))]
    UnknownKeys { origin: String, keys: Vec<String> },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoStart {
    pub x: f64,
    pub lane: usize,
    pub speed: f64,
}

impl Default for EgoStart {
    fn default() -> Self {
        Self { x: 0.0, lane: 1, speed: 27.0 }
    }
}

/// A scripted surrounding vehicle. `x` is relative to the ego start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
    /// IDM desired speed; defaults to `speed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    /// Random vehicles per km per lane.
    pub density: f64,
    pub speed_mean: f64,
    /// Half-width of the uniform desired-speed distribution.
    pub speed_spread: f64,
    /// Per-lane shift of `speed_mean`, left lane first. Missing lanes get 0.
    pub lane_speed_offsets: Vec<f64>,
    /// Length of the ego-centred road window.
    pub window_m: f64,
    /// Free distance around the ego when random traffic is placed.
    pub start_clearance: f64,
    /// Free distance required in a lane to respawn a vehicle there.
    pub respawn_clearance: f64,
    pub vehicles: Vec<VehicleSpec>,
}

impl TrafficConfig {
    pub fn lane_mean(&self, lane: usize) -> f64 {
        self.speed_mean + self.lane_speed_offsets.get(lane).copied().unwrap_or(0.0)
    }
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            density: 20.0,
            speed_mean: 24.0,
            speed_spread: 3.0,
            lane_speed_offsets: Vec::new(),
            window_m: 1000.0,
            start_clearance: 40.0,
            respawn_clearance: 40.0,
            vehicles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Disable to run the ego as a pure car follower.
    pub lane_changes: bool,
    pub predictor: PredictorKind,
    pub predictor_deadline_ms: u64,
    pub ego: EgoStart,
    pub traffic: TrafficConfig,
    pub surround_lane_change: SurroundLaneChangeParams,
    pub idm: IdmParams,
    pub road: LaneGeometry,
    pub vehicle: BicycleParams,
    pub decision: DecisionParams,
    pub control: ControlParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "highway".into(),
            seed: 0,
            duration_s: 300.0,
            lane_changes: true,
            predictor: PredictorKind::Frozen,
            predictor_deadline_ms: 50,
            ego: EgoStart::default(),
            traffic: TrafficConfig::default(),
            surround_lane_change: SurroundLaneChangeParams::default(),
            idm: IdmParams::default(),
            road: LaneGeometry::default(),
            vehicle: BicycleParams::default(),
            decision: DecisionParams::default(),
            control: ControlParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn ts(&self) -> f64 {
        self.control.ts
    }

    pub fn frames(&self) -> u64 {
        (self.duration_s / self.ts()).round() as u64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        let t = &self.traffic;
        if !(t.density >= 0.0 && t.density.is_finite()) {
            return Err(format!("traffic.density must be non-negative, got {}", t.density));
        }
        for lane in 0..self.road.lanes {
            if !(t.speed_spread >= 0.0 && t.lane_mean(lane) - t.speed_spread > 0.0) {
                return Err(format!("traffic speeds in lane {lane} must stay positive"));
            }
        }
        if !(t.window_m > 0.0 && t.start_clearance >= 0.0 && t.respawn_clearance >= 0.0) {
            return Err("traffic.window_m must be positive and clearances non-negative".into());
        }
        if !(1..=32).contains(&self.road.lanes) || !(self.road.width > 0.0) {
            return Err("road needs 1 to 32 lanes of positive width".into());
        }
        if self.ego.lane >= self.road.lanes || !(self.ego.speed >= 0.0) {
            return Err(format!("ego.lane {} is not on the road or ego.speed is negative", self.ego.lane));
        }
        for (i, v) in t.vehicles.iter().enumerate() {
            if v.lane >= self.road.lanes || !(v.speed >= 0.0) || v.desired_speed.is_some_and(|d| !(d > 0.0)) {
                return Err(format!("traffic.vehicles[{i}] has an invalid lane or speed"));
            }
        }
        if self.decision.ts != self.control.ts {
            return Err("decision.ts and control.ts must agree".into());
        }
        self.vehicle.validate()?;
        self.decision.validate()?;
        self.control.validate()?;
        self.idm.validate()?;
        self.surround_lane_change.validate()
    }
}

/// Parse and validate a config. `origin` labels diagnostics.
pub fn parse_config(text: &str, origin: &str, strict: bool) -> Result<ScenarioConfig, ConfigError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string()))
        .and_then(|c| de.end().map(|_| c))
        .map_err(|source| ConfigError::Parse { origin: origin.to_string(), source })?;
    if !unknown.is_empty() {
        if strict {
            return Err(ConfigError::UnknownKeys { origin: origin.to_string(), keys: unknown });
        }
        log::warn!("{origin}: ignoring unknown keys {}", unknown.join(", "));
    }
    config
        .validate()
        .map_err(|message| ConfigError::Invalid { origin: origin.to_string(), message })?;
    Ok(config)
}

pub fn load_config(path: &Path, strict: bool) -> Result<ScenarioConfig, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: origin.clone(), source })?;
    parse_config(&text, &origin, strict)
}
