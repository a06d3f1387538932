use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::LaneSwitch;
use crate::dynamics::BicycleState;
use crate::road::LaneGeometry;

/// Lateral error below which a lane change counts as complete.
pub const SETTLE_POSITION: f64 = 0.1;
/// Lateral speed below which a lane change counts as complete.
pub const SETTLE_SPEED: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum ManeuverPhase {
    LaneKeep { lane: usize },
    LaneChange { from: usize, to: usize },
}

impl ManeuverPhase {
    /// Lane the controller is currently steering toward.
    pub fn target_lane(&self) -> usize {
        match *self {
            ManeuverPhase::LaneKeep { lane } => lane,
            ManeuverPhase::LaneChange { to, .. } => to,
        }
    }

    pub fn is_changing(&self) -> bool {
        matches!(self, ManeuverPhase::LaneChange { .. })
    }

    pub fn y_ref(&self, geometry: &LaneGeometry) -> f64 {
        geometry.centerline(self.target_lane())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ManeuverEvent {
    Started { from: usize, to: usize },
    Completed { lane: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManeuverError {
    #[error("lane switch {switch} from lane {lane} leaves the road")]
    NoSuchLane { lane: usize, switch: i8 },
}

/// Advance the maneuver latch by one frame.
///
/// A new switch is only accepted in lane keeping; while a change is in
/// progress the decision is ignored until the ego settles on the target
/// centerline.
pub fn maneuver_tracker(
    ego: &BicycleState,
    decision: LaneSwitch,
    phase: ManeuverPhase,
    geometry: &LaneGeometry,
) -> Result<(ManeuverPhase, Option<ManeuverEvent>), ManeuverError> {
    match phase {
        ManeuverPhase::LaneChange { to, .. } => {
            let settled = (ego.y - geometry.centerline(to)).abs() < SETTLE_POSITION && ego.y_dot().abs() < SETTLE_SPEED;
            if settled {
                Ok((ManeuverPhase::LaneKeep { lane: to }, Some(ManeuverEvent::Completed { lane: to })))
            } else {
                Ok((phase, None))
            }
        }
        ManeuverPhase::LaneKeep { lane } => {
            let target = match decision {
                LaneSwitch::Keep => return Ok((phase, None)),
                LaneSwitch::Left => geometry.left_of(lane),
                LaneSwitch::Right => geometry.right_of(lane),
            };
            let to = target.ok_or(ManeuverError::NoSuchLane { lane, switch: decision.as_i8() })?;
            Ok((ManeuverPhase::LaneChange { from: lane, to }, Some(ManeuverEvent::Started { from: lane, to })))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_leaves_reference_alone() {
        let g = LaneGeometry::default();
        let ego = BicycleState::cruising(0.0, -4.8, 27.0);
        let phase = ManeuverPhase::LaneKeep { lane: 1 };
        assert_eq!(maneuver_tracker(&ego, LaneSwitch::Keep, phase, &g), Ok((phase, None)));
    }

    #[test]
    fn left_from_centre_targets_lane_zero() {
        let g = LaneGeometry::default();
        let ego = BicycleState::cruising(0.0, -4.8, 27.0);
        let (phase, ev) = maneuver_tracker(&ego, LaneSwitch::Left, ManeuverPhase::LaneKeep { lane: 1 }, &g).unwrap();
        assert_eq!(phase, ManeuverPhase::LaneChange { from: 1, to: 0 });
        assert_eq!(phase.y_ref(&g), -1.6);
        assert_eq!(ev, Some(ManeuverEvent::Started { from: 1, to: 0 }));
    }

    #[test]
    fn latch_holds_until_settled() {
        let g = LaneGeometry::default();
        let phase = ManeuverPhase::LaneChange { from: 1, to: 0 };
        let mid = BicycleState::cruising(0.0, -3.0, 27.0);
        assert_eq!(maneuver_tracker(&mid, LaneSwitch::Right, phase, &g), Ok((phase, None)));

        let mut moving = BicycleState::cruising(0.0, -1.62, 27.0);
        moving.v = 0.2;
        assert_eq!(maneuver_tracker(&moving, LaneSwitch::Keep, phase, &g), Ok((phase, None)));

        let done = BicycleState::cruising(0.0, -1.62, 27.0);
        let (next, ev) = maneuver_tracker(&done, LaneSwitch::Keep, phase, &g).unwrap();
        assert_eq!(next, ManeuverPhase::LaneKeep { lane: 0 });
        assert_eq!(ev, Some(ManeuverEvent::Completed { lane: 0 }));
    }

    #[test]
    fn switch_off_the_road_is_rejected() {
        let g = LaneGeometry::default();
        let ego = BicycleState::cruising(0.0, -1.6, 27.0);
        let err = maneuver_tracker(&ego, LaneSwitch::Left, ManeuverPhase::LaneKeep { lane: 0 }, &g);
        assert_eq!(err, Err(ManeuverError::NoSuchLane { lane: 0, switch: 1 }));
        let ego = BicycleState::cruising(0.0, -8.0, 27.0);
        assert!(maneuver_tracker(&ego, LaneSwitch::Right, ManeuverPhase::LaneKeep { lane: 2 }, &g).is_err());
    }
}
