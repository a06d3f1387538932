//! The trajectory controller alone: recover from a 1 m lateral offset while
//! following a leader that brakes to 20 m/s.
//!
//! ```text
//! cargo run --release --example lane_keep_control
//! ```

use lanechange::control::{solve_control, ControlParams, ControlReference, ManeuverPhase};
use lanechange::dynamics::{step_bicycle, BicycleParams, BicycleState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ControlParams::default();
    let vehicle = BicycleParams::default();
    let ts = params.ts;
    let y_ref = -4.8;
    let phase = ManeuverPhase::LaneKeep { lane: 1 };

    // leader starts 45 m ahead at 25 m/s and brakes at 1 m/s^2 down to 20 m/s
    let leader = |t: f64| {
        let tb = 5.0;
        let tt = t.min(tb);
        50.0 + 25.0 * tt - 0.5 * tt * tt + 20.0 * (t - tb).max(0.0)
    };

    let mut ego = BicycleState::cruising(0.0, y_ref + 1.0, 25.0);
    let mut warm = None;
    println!("   t      y    yaw     u   accel  steer   gap  iters");
    for frame in 0..150 {
        let t = frame as f64 * ts;
        let xs = (1..=params.horizon).map(|k| leader(t + k as f64 * ts)).collect();
        let r = ControlReference { y_ref, leader_x: Some(xs), phase };
        let sol = solve_control(&ego, &r, warm.as_ref(), None, &params, &vehicle);
        let cmd = sol.first_command();
        if frame % 10 == 0 {
            println!(
                "{t:5.1} {:6.3} {:6.3} {:5.2} {:6.2} {:6.2} {:5.1} {:5}",
                ego.y,
                ego.yaw.to_degrees(),
                ego.u,
                cmd.accel,
                cmd.steer.to_degrees(),
                leader(t) - ego.x - params.body_length,
                sol.iterations
            );
        }
        ego = step_bicycle(&ego, &cmd, &vehicle, ts)?;
        warm = Some(sol);
    }
    Ok(())
}
