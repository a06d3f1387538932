use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::PredictionError;

/// Frames of history the learned predictor consumes (3 s at 10 Hz).
pub const HISTORY_FRAMES: usize = 30;

/// Stable identifier of a simulated vehicle. The ego vehicle is id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u64);

impl VehicleId {
    pub const EGO: VehicleId = VehicleId(0);
}

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySample {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
}

/// Rolling window of recent positions for every vehicle in the world.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryHistory {
    tracks: BTreeMap<VehicleId, VecDeque<HistorySample>>,
    last_frame: Option<u64>,
    capacity: usize,
}

impl TrajectoryHistory {
    pub fn new() -> Self {
        Self::with_capacity(HISTORY_FRAMES)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            tracks: BTreeMap::new(),
            last_frame: None,
            capacity: capacity.max(1),
        }
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    /// Append one frame for all vehicles present. Vehicles missing from this
    /// frame are dropped, since their window would no longer be consecutive.
    pub fn record_frame<I>(&mut self, frame: u64, vehicles: I) -> Result<(), PredictionError>
    where
        I: IntoIterator<Item = (VehicleId, f64, f64)>,
    {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(PredictionError::NonIncreasingFrame { frame, last });
            }
        }
        let mut seen = Vec::new();
        for (id, x, y) in vehicles {
            let track = self.tracks.entry(id).or_default();
            if track.back().is_some_and(|s| s.frame + 1 != frame) {
                track.clear();
            }
            track.push_back(HistorySample { frame, x, y });
            while track.len() > self.capacity {
                track.pop_front();
            }
            seen.push(id);
        }
        seen.sort_unstable();
        self.tracks.retain(|id, _| seen.binary_search(id).is_ok());
        self.last_frame = Some(frame);
        Ok(())
    }

    pub fn track(&self, id: VehicleId) -> Option<&VecDeque<HistorySample>> {
        self.tracks.get(&id)
    }

    pub fn len_of(&self, id: VehicleId) -> usize {
        self.tracks.get(&id).map_or(0, VecDeque::len)
    }

    pub fn has_full_window(&self, id: VehicleId) -> bool {
        self.len_of(id) >= self.capacity
    }

    pub fn vehicles(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.tracks.keys().copied()
    }

    /// Flattened `(frame, id, x, y)` rows for the target and every vehicle
    /// whose latest position lies within `radius` metres longitudinally.
    pub fn neighborhood(&self, target: VehicleId, radius: f64) -> Vec<(u64, u64, f64, f64)> {
        let Some(center) = self.tracks.get(&target).and_then(|t| t.back()) else {
            return Vec::new();
        };
        let mut rows = Vec::new();
        for (id, track) in &self.tracks {
            let Some(latest) = track.back() else { continue };
            if *id != target && (latest.x - center.x).abs() > radius {
                continue;
            }
            rows.extend(track.iter().map(|s| (s.frame, id.0, s.x, s.y)));
        }
        rows
    }
}
