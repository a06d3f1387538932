//! Lane scoring for one snapshot: a slow leader in the ego lane, a freer
//! lane to the left and a tight gap to the right.
//!
//! ```text
//! cargo run --release --example lane_costs
//! ```

use lanechange::decision::{
    desired_distance, evaluate_lane, safety_gate, select_lane, DecisionParams, LaneView, NeighborSnapshot,
    NeighborTrack,
};
use lanechange::dynamics::PointMassState;
use lanechange::prediction::VehicleId;

fn track(id: u64, x: f64, speed: f64, params: &DecisionParams) -> NeighborTrack {
    NeighborTrack {
        id: VehicleId(id),
        x,
        speed,
        predicted_x: (1..=params.horizon).map(|k| x + speed * k as f64 * params.ts).collect(),
    }
}

fn main() {
    let params = DecisionParams::default();
    let ego = PointMassState::new(0.0, 27.0, 0.0, 0.0);
    println!("desired following distance at 27 m/s: {:.1} m", desired_distance(27.0, &params));

    let snapshot = NeighborSnapshot {
        left: LaneView { exists: true, leader: Some(track(1, 120.0, 26.0, &params)), follower: Some(track(2, -40.0, 27.0, &params)) },
        current: LaneView { exists: true, leader: Some(track(3, 40.0, 21.0, &params)), follower: None },
        right: LaneView { exists: true, leader: Some(track(4, 14.0, 25.0, &params)), follower: None },
    };

    for (name, lane, adjacent) in [
        ("left", &snapshot.left, true),
        ("current", &snapshot.current, false),
        ("right", &snapshot.right, true),
    ] {
        let gated = adjacent && !safety_gate(lane, ego.s, &params);
        let sol = evaluate_lane(ego, lane, adjacent, &params, None);
        println!(
            "{name:>8}: J = {:>9.4}  first accel {:+.2}  end speed {:5.2}{}",
            sol.cost,
            sol.first_accel(),
            sol.states.last().map_or(ego.v, |s| s.v),
            if gated { "  (gap gate closed)" } else { "" }
        );
    }

    let d = select_lane(&snapshot, ego, &params);
    println!("\ndecision: {:?} (l_sw = {}), u_d = {:+.2} m/s^2", d.lane_switch, d.lane_switch.as_i8(), d.desired_accel);

    println!("\ncurrent-lane cost against a 21 m/s leader:");
    for gap in [20.0, 30.0, 40.0, 50.0, 70.0, 100.0] {
        let lane = LaneView { exists: true, leader: Some(track(3, gap + params.body_length, 21.0, &params)), follower: None };
        let sol = evaluate_lane(ego, &lane, false, &params, None);
        println!("  gap {gap:5.0} m  J = {:9.4}", sol.cost);
    }
}
