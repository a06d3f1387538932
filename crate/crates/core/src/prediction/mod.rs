//! Trajectory history and leader/follower prediction.
//!
//! The frozen-time predictor is built in. A learned predictor can run as a
//! separate process and is reached through [`external::ExternalPredictor`],
//! which speaks newline-delimited JSON over the child's stdin/stdout.

pub mod external;
mod history;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{ExternalError, ExternalPredictor, PredictRequest, PredictResponse};
pub use history::{HistorySample, TrajectoryHistory, VehicleId, HISTORY_FRAMES};

/// Number of future frames in every prediction.
pub const PREDICTION_HORIZON: usize = 50;
/// Longitudinal radius of the neighbourhood passed to the learned predictor.
pub const NEIGHBOR_RADIUS_M: f64 = 110.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("frame {frame} is not after the last recorded frame {last}")]
    NonIncreasingFrame { frame: u64, last: u64 },
    #[error("trajectory lengths differ: predicted {predicted}, actual {actual}")]
    LengthMismatch { predicted: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    #[serde(alias = "frozen_time")]
    Frozen,
    External,
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictorKind::Frozen => "frozen",
            PredictorKind::External => "external",
        })
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frozen" | "frozen_time" => Ok(PredictorKind::Frozen),
            "external" => Ok(PredictorKind::External),
            other => Err(format!("unknown predictor `{other}` (expected frozen|external)")),
        }
    }
}

/// Future positions of one vehicle, frames `t+1 ..= t+len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub target: VehicleId,
    pub points: Vec<(f64, f64)>,
}

impl PredictedTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn longitudinal(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }
}

/// Constant-velocity, lane-holding extrapolation.
pub fn predict_frozen(
    target: VehicleId,
    x: f64,
    y: f64,
    speed: f64,
    horizon: usize,
    ts: f64,
) -> PredictedTrajectory {
    debug_assert!(speed >= 0.0);
    PredictedTrajectory {
        target,
        points: (1..=horizon).map(|k| (x + k as f64 * ts * speed, y)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionErrors {
    /// Euclidean displacement at each horizon step.
    pub per_horizon: Vec<f64>,
    /// Mean of `per_horizon`.
    pub average: f64,
}

impl PredictionErrors {
    pub fn final_displacement(&self) -> f64 {
        self.per_horizon.last().copied().unwrap_or(0.0)
    }
}

pub fn prediction_error(
    predicted: &PredictedTrajectory,
    actual: &[(f64, f64)],
) -> Result<PredictionErrors, PredictionError> {
    if predicted.points.len() != actual.len() {
        return Err(PredictionError::LengthMismatch {
            predicted: predicted.points.len(),
            actual: actual.len(),
        });
    }
    let per_horizon: Vec<f64> = predicted
        .points
        .iter()
        .zip(actual)
        .map(|(p, a)| (p.0 - a.0).hypot(p.1 - a.1))
        .collect();
    let average = if per_horizon.is_empty() {
        0.0
    } else {
        per_horizon.iter().sum::<f64>() / per_horizon.len() as f64
    };
    Ok(PredictionErrors { per_horizon, average })
}

/// What happened while producing a prediction, for the event log.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionNote {
    /// The learned predictor missed its deadline; frozen-time was used.
    Timeout { target: VehicleId },
    /// The learned predictor returned something unusable; frozen-time was used.
    Failed { target: VehicleId, reason: String },
}

/// Predictor selected for leaders. Followers are always frozen-time.
pub struct LeaderPredictor {
    kind: PredictorKind,
    external: Option<ExternalPredictor>,
}

impl LeaderPredictor {
    pub fn frozen() -> Self {
        Self {
            kind: PredictorKind::Frozen,
            external: None,
        }
    }

    pub fn external(client: ExternalPredictor) -> Self {
        Self {
            kind: PredictorKind::External,
            external: Some(client),
        }
    }

    /// Keeps a connection open but never consults it.
    pub fn frozen_with_detached(client: ExternalPredictor) -> Self {
        Self {
            kind: PredictorKind::Frozen,
            external: Some(client),
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    /// Predict a leader. Vehicles without a full history window, or any run
    /// configured as frozen-time, use the constant-velocity model.
    pub fn predict_leader(
        &mut self,
        history: &TrajectoryHistory,
        target: VehicleId,
        current: (f64, f64, f64),
        ts: f64,
    ) -> (PredictedTrajectory, Option<PredictionNote>) {
        let (x, y, speed) = current;
        let frozen = || predict_frozen(target, x, y, speed.max(0.0), PREDICTION_HORIZON, ts);
        match (&self.kind, self.external.as_mut()) {
            (PredictorKind::External, Some(client)) if history.has_full_window(target) => {
                match client.predict_external(history, target, (x, y, speed), ts) {
                    Ok((traj, false)) => (traj, None),
                    Ok((traj, true)) => (traj, Some(PredictionNote::Timeout { target })),
                    Err(err) => {
                        log::warn!("external prediction for vehicle {target} failed: {err}");
                        (
                            frozen(),
                            Some(PredictionNote::Failed {
                                target,
                                reason: err.to_string(),
                            }),
                        )
                    }
                }
            }
            _ => (frozen(), None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn frozen_examples() {
        let p = predict_frozen(VehicleId(4), 100.0, -4.8, 25.0, PREDICTION_HORIZON, 0.1);
        assert_eq!(p.len(), 50);
        assert_relative_eq!(p.points[9].0, 125.0, epsilon = 1e-12);
        assert!(p.points.iter().all(|q| q.1 == -4.8));
        let still = predict_frozen(VehicleId(4), 100.0, -4.8, 0.0, PREDICTION_HORIZON, 0.1);
        assert!(still.points.iter().all(|&q| q == (100.0, -4.8)));
    }

    #[test]
    fn errors_zero_for_exact_match() {
        let p = predict_frozen(VehicleId(1), 0.0, 0.0, 20.0, 50, 0.1);
        let e = prediction_error(&p, &p.points).unwrap();
        assert!(e.per_horizon.iter().all(|&v| v == 0.0));
        assert_eq!(e.average, 0.0);
    }

    #[test]
    fn error_length_mismatch() {
        let p = predict_frozen(VehicleId(1), 0.0, 0.0, 20.0, 50, 0.1);
        assert_eq!(
            prediction_error(&p, &p.points[..49]).unwrap_err(),
            PredictionError::LengthMismatch { predicted: 50, actual: 49 }
        );
    }

    #[test]
    fn frozen_error_on_braking_leader() {
        let ts = 0.1;
        let p = predict_frozen(VehicleId(1), 0.0, -4.8, 25.0, 50, ts);
        let actual: Vec<(f64, f64)> = (1..=50)
            .map(|k| {
                let t = k as f64 * ts;
                (25.0 * t - 0.5 * t * t, -4.8)
            })
            .collect();
        let e = prediction_error(&p, &actual).unwrap();
        assert_relative_eq!(e.per_horizon[4], 0.125, epsilon = 1e-9);
        for (k, err) in e.per_horizon.iter().enumerate() {
            let t = (k + 1) as f64 * ts;
            assert!((err - 0.5 * t * t).abs() < 1e-9);
        }
    }

    #[test]
    fn predictor_kind_parsing() {
        assert_eq!("frozen".parse::<PredictorKind>().unwrap(), PredictorKind::Frozen);
        assert_eq!("external".parse::<PredictorKind>().unwrap(), PredictorKind::External);
        assert!("lstm".parse::<PredictorKind>().is_err());
    }
}
