use std::io::{BufRead, BufReader, Write};
use std::thread;
use std::time::Duration;

use lanechange::config::{parse_config, ScenarioConfig, VehicleSpec};
use lanechange::prediction::{ExternalPredictor, LeaderPredictor, PredictRequest, PredictResponse, PredictorKind};
use lanechange::run_scenario;
use lanechange::simulation::World;

fn config(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(format!("{}/configs/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap();
    parse_config(&text, name, true).unwrap()
}

fn empty_road(duration_s: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig { duration_s, ..ScenarioConfig::default() };
    c.traffic.density = 0.0;
    c
}

/// In-process predictor server answering each request with `reply`.
fn fake_server<F>(reply: F) -> ExternalPredictor
where
    F: Fn(&PredictRequest) -> PredictResponse + Send + 'static,
{
    let (req_rx, req_tx) = std::io::pipe().unwrap();
    let (resp_rx, mut resp_tx) = std::io::pipe().unwrap();
    thread::spawn(move || {
        for line in BufReader::new(req_rx).lines() {
            let Ok(line) = line else { break };
            let req: PredictRequest = serde_json::from_str(&line).unwrap();
            let out = serde_json::to_string(&reply(&req)).unwrap();
            if writeln!(resp_tx, "{out}").is_err() {
                break;
            }
        }
    });
    ExternalPredictor::from_streams(req_tx, BufReader::new(resp_rx), Duration::from_secs(5))
}

/// Constant velocity fitted to the last two history rows of the target.
fn constant_velocity(req: &PredictRequest) -> PredictResponse {
    let mut rows: Vec<_> = req.history.iter().filter(|r| r.1 == req.target).collect();
    rows.sort_by_key(|r| r.0);
    let (a, b) = (rows[rows.len() - 2], rows[rows.len() - 1]);
    let (vx, vy) = ((b.2 - a.2) / 0.1, (b.3 - a.3) / 0.1);
    let trajectory = (1..=50).map(|k| [b.2 + vx * k as f64 * 0.1, b.3 + vy * k as f64 * 0.1]).collect();
    PredictResponse { id: req.id, trajectory: Some(trajectory), error: None }
}

#[test]
fn same_seed_same_run() {
    let c = ScenarioConfig { duration_s: 20.0, seed: 11, ..ScenarioConfig::default() };
    let a = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    let b = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.events, b.events);
    let other = run_scenario(&ScenarioConfig { seed: 12, ..c }, &mut LeaderPredictor::frozen()).unwrap();
    assert_ne!(a.trace, other.trace);
}

#[test]
fn free_cruise_holds_speed_and_lane() {
    let c = empty_road(10.0);
    let out = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    assert_eq!(out.trace.len(), 100);
    let mut world = World::new(c.clone()).unwrap();
    for _ in 0..100 {
        world.step(&mut LeaderPredictor::frozen()).unwrap();
    }
    assert!((world.ego().x - 270.0).abs() < 0.1, "x = {}", world.ego().x);
    assert!((world.ego().y - c.road.centerline(1)).abs() < 1e-6);
    assert!(out.trace.iter().all(|r| r.l_sw.is_none_or(|l| l == 0) && r.lane == 1));
}

#[test]
fn slow_leader_triggers_a_lane_change() {
    let c = config("slow_leader");
    let out = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    assert!(out.summary.completed);
    assert!(out.summary.lane_changes >= 1);
    let last = out.trace.last().unwrap();
    assert_ne!(last.lane, c.ego.lane);
    assert!((last.y - c.road.centerline(last.lane)).abs() < 0.1);
    assert!(out.trace.iter().all(|r| r.y < c.road.y_max() && r.y > c.road.y_min()));
}

#[test]
fn boxed_in_ego_stays_and_follows() {
    let c = config("slow_platoon");
    let out = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    assert!(out.summary.completed);
    assert!(out.trace.iter().all(|r| r.l_sw.is_none_or(|l| l == 0)), "ego tried to leave a boxed-in lane");
    assert_eq!(out.summary.lane_changes, 0);
    let gap = out.trace.iter().filter_map(|r| r.same_lane_gap).fold(f64::INFINITY, f64::min);
    assert!(gap >= 10.0, "min gap {gap}");
    // settled behind the 18 m/s leader
    let tail = &out.trace[out.trace.len() - 100..];
    assert!(tail.iter().all(|r| (r.u - 18.0).abs() < 0.5));
}

#[test]
fn idm_platoon_converges_to_its_leader() {
    let mut c = empty_road(60.0);
    c.ego.lane = 2;
    c.surround_lane_change.enabled = false;
    c.traffic.vehicles = std::iter::once(VehicleSpec { lane: 0, x: 200.0, speed: 22.0, desired_speed: None })
        .chain((1..5).map(|i| VehicleSpec { lane: 0, x: 200.0 - 35.0 * i as f64, speed: 26.0, desired_speed: Some(30.0) }))
        .collect();
    let mut world = World::new(c).unwrap();
    let mut predictor = LeaderPredictor::frozen();
    for _ in 0..600 {
        world.step(&mut predictor).unwrap();
    }
    let platoon: Vec<_> = world.vehicles().iter().filter(|v| v.lane == 0).collect();
    assert_eq!(platoon.len(), 5);
    for v in platoon {
        assert!((v.speed - 22.0).abs() < 0.1, "vehicle {} at {}", v.id, v.speed);
    }
}

#[test]
fn empty_road_reaches_reference_speed() {
    let mut c = empty_road(40.0);
    c.ego.speed = 22.0;
    let out = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    let tail = &out.trace[200..];
    let mean = tail.iter().map(|r| r.u).sum::<f64>() / tail.len() as f64;
    assert!((mean - 27.0).abs() < 0.5, "mean speed {mean}");
}

#[test]
fn failing_predictor_degrades_to_frozen() {
    let c = ScenarioConfig { duration_s: 15.0, seed: 3, ..ScenarioConfig::default() };
    let frozen = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    let server = fake_server(|r| PredictResponse { id: r.id, trajectory: None, error: Some("no model".into()) });
    let mut external = LeaderPredictor::external(server);
    let out = run_scenario(&ScenarioConfig { predictor: PredictorKind::External, ..c }, &mut external).unwrap();
    assert_eq!(out.summary.predictor, PredictorKind::External);
    assert!(out.summary.predictor_fallbacks > 0);
    assert_eq!(out.trace, frozen.trace);
}

#[test]
fn external_predictor_drives_the_decision() {
    let c = ScenarioConfig { predictor: PredictorKind::External, ..config("slow_leader") };
    let mut predictor = LeaderPredictor::external(fake_server(constant_velocity));
    let out = run_scenario(&c, &mut predictor).unwrap();
    assert_eq!(out.summary.predictor_fallbacks, 0);
    assert!(out.summary.completed);
    assert!(out.summary.lane_changes >= 1);
    assert!(out.summary.prediction_samples > 0);
}

#[test]
fn detached_predictor_is_never_consulted() {
    let c = ScenarioConfig { duration_s: 10.0, seed: 5, ..ScenarioConfig::default() };
    let frozen = run_scenario(&c, &mut LeaderPredictor::frozen()).unwrap();
    let server = fake_server(|_| panic!("a frozen-time run sent a request"));
    let out = run_scenario(&c, &mut LeaderPredictor::frozen_with_detached(server)).unwrap();
    assert_eq!(out.trace, frozen.trace);
    assert_eq!(out.events, frozen.events);
}
