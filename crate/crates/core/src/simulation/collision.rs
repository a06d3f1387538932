use serde::Serialize;

use crate::prediction::VehicleId;

/// Footprint of every vehicle in the world.
pub const BODY_WIDTH: f64 = 1.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Collision {
    pub other: VehicleId,
    /// Centre-to-centre offsets, other minus ego.
    pub dx: f64,
    pub dy: f64,
}

/// Axis-aligned rectangle overlap of the ego against each `(id, x, y)`.
/// In a shared lane this reduces to centres closer than one body length.
pub fn detect_collision<I>(ego_x: f64, ego_y: f64, others: I, body_length: f64) -> Option<Collision>
where
    I: IntoIterator<Item = (VehicleId, f64, f64)>,
{
    others.into_iter().find_map(|(id, x, y)| {
        let (dx, dy) = (x - ego_x, y - ego_y);
        (dx.abs() < body_length && dy.abs() < BODY_WIDTH).then_some(Collision { other: id, dx, dy })
    })
}

/// Smallest bumper gap to any vehicle overlapping the ego laterally.
pub fn same_lane_gap<I>(ego_x: f64, ego_y: f64, others: I, body_length: f64) -> f64
where
    I: IntoIterator<Item = (VehicleId, f64, f64)>,
{
    others
        .into_iter()
        .filter(|&(_, _, y)| (y - ego_y).abs() < BODY_WIDTH)
        .map(|(_, x, _)| (x - ego_x).abs() - body_length)
        .fold(f64::INFINITY, f64::min)
}
