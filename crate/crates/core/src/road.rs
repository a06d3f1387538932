use serde::{Deserialize, Serialize};

/// Straight multi-lane road. Lane 0 is the leftmost lane, adjacent to
/// `y = 0`; lateral position decreases to the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneGeometry {
    pub lanes: usize,
    pub width: f64,
}

impl Default for LaneGeometry {
    fn default() -> Self {
        Self { lanes: 3, width: 3.2 }
    }
}

impl LaneGeometry {
    pub fn centerline(&self, lane: usize) -> f64 {
        -self.width * (lane as f64 + 0.5)
    }

    pub fn y_max(&self) -> f64 {
        0.0
    }

    pub fn y_min(&self) -> f64 {
        -self.width * self.lanes as f64
    }

    /// Lane whose centerline is nearest to `y`.
    pub fn nearest_lane(&self, y: f64) -> usize {
        let idx = (-y / self.width - 0.5).round();
        idx.clamp(0.0, (self.lanes - 1) as f64) as usize
    }

    /// Lanes a body of half-width `half_width` centred at `y` overlaps.
    pub fn occupied_lanes(&self, y: f64, half_width: f64) -> impl Iterator<Item = usize> + '_ {
        let reach = self.width / 2.0 + half_width;
        (0..self.lanes).filter(move |&i| (y - self.centerline(i)).abs() < reach)
    }

    pub fn left_of(&self, lane: usize) -> Option<usize> {
        lane.checked_sub(1)
    }

    pub fn right_of(&self, lane: usize) -> Option<usize> {
        (lane + 1 < self.lanes).then_some(lane + 1)
    }

    /// Outer boundary of `lane` on the side away from `from`.
    pub fn far_boundary(&self, from: usize, lane: usize) -> f64 {
        let c = self.centerline(lane);
        if lane < from {
            c + self.width / 2.0
        } else {
            c - self.width / 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lane_layout() {
        let g = LaneGeometry::default();
        for (lane, y) in [-1.6, -4.8, -8.0].into_iter().enumerate() {
            assert!((g.centerline(lane) - y).abs() < 1e-12);
        }
        assert!((g.y_min() + 9.6).abs() < 1e-12);
        assert_eq!(g.nearest_lane(-3.3), 1);
        assert_eq!(g.nearest_lane(-3.1), 0);
        assert_eq!(g.nearest_lane(5.0), 0);
        assert_eq!(g.nearest_lane(-20.0), 2);
        assert_eq!(g.left_of(0), None);
        assert_eq!(g.right_of(2), None);
    }

    #[test]
    fn straddling_body_occupies_both_lanes() {
        let g = LaneGeometry::default();
        let lanes: Vec<usize> = g.occupied_lanes(-3.2, 0.9).collect();
        assert_eq!(lanes, vec![0, 1]);
        let lanes: Vec<usize> = g.occupied_lanes(-4.8, 0.9).collect();
        assert_eq!(lanes, vec![1]);
    }
}
