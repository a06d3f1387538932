//! A 20 m/s leader 40 m ahead on an otherwise empty road. The ego decides to
//! leave its lane, steers into the neighbour and settles on its centerline.
//!
//! ```text
//! cargo run --release --example slow_leader_overtake
//! ```

use lanechange::config::{parse_config, ScenarioConfig};
use lanechange::prediction::LeaderPredictor;
use lanechange::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config: ScenarioConfig =
        parse_config(include_str!("../configs/slow_leader.json"), "slow_leader.json", true)?;
    let out = run_scenario(&config, &mut LeaderPredictor::frozen())?;
    let ts = config.ts();

    let first = out.trace.iter().find(|r| r.l_sw.is_some_and(|l| l != 0)).ok_or("the ego never left its lane")?;
    let target_y = config.road.centerline(first.target_lane);
    println!(
        "lane switch {:+} issued at t = {:.1} s (J = {:?} / {:?} / {:?})",
        first.l_sw.unwrap(),
        first.t,
        first.j_left.map(|j| (j * 1e3).round() / 1e3),
        first.j_current.map(|j| (j * 1e3).round() / 1e3),
        first.j_right.map(|j| (j * 1e3).round() / 1e3),
    );
    // first frame after which the ego never strays more than 0.1 m again
    let last_outside = out.trace.iter().rposition(|r| (r.y - target_y).abs() > 0.1).ok_or("no lateral motion")?;
    let settled = (out.trace[last_outside].frame + 1 - first.frame) as f64 * ts;
    let far = config.road.far_boundary(config.ego.lane, first.target_lane);
    let outward = (far - target_y).signum();
    let overshoot = out.trace.iter().map(|r| (r.y - target_y) * outward).fold(0.0, f64::max);
    println!("settled within 0.1 m of the target centerline {settled:.1} s after the switch");
    println!("overshoot past the centerline {overshoot:.3} m (far lane boundary {:.1} m beyond it)", (far - target_y).abs());

    println!("\n   t      x      y     u   accel  steer  lane  leader gap");
    for r in out.trace.iter().step_by(10).take(15) {
        println!(
            "{:5.1} {:6.1} {:6.2} {:5.2} {:6.2} {:6.2}  {:>4}  {}",
            r.t,
            r.x,
            r.y,
            r.u,
            r.accel,
            r.steer.to_degrees(),
            r.lane,
            r.leader_gap.map_or("-".into(), |g| format!("{g:.1}")),
        );
    }
    let s = &out.summary;
    println!("\nmean speed {:.2} m/s, {} lane change(s), min gap {:?}", s.mean_speed, s.lane_changes, s.min_gap);
    Ok(())
}
