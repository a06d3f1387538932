//! Closed-loop highway world.
//!
//! Surrounding vehicles are IDM point masses on lane centerlines that change
//! lanes by gap acceptance; the ego runs the full decision and control
//! pipeline on the bicycle model. One frame of [`World::step`]:
//!
//! 1. record every vehicle in the trajectory history;
//! 2. build the neighbour snapshot around the ego lane;
//! 3. run the lane decision if the ego is lane keeping behind a close leader;
//! 4. advance the maneuver latch;
//! 5. solve the control problem and apply its first command;
//! 6. move the surrounding traffic;
//! 7. check for collisions;
//! 8. emit the trace row.
//!
//! The only random stream belongs to the surrounding traffic, so the surround
//! evolves identically whatever the ego's predictor does, up to interaction
//! with the ego itself.

pub mod collision;
pub mod idm;
pub mod trace;
pub mod traffic;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::control::{
    maneuver_tracker, solve_control, ControlReference, ControlSolution, ManeuverError, ManeuverEvent, ManeuverPhase,
    MIN_ROLLOUT_SPEED,
};
use crate::decision::{select_lane, DecisionResult, LaneSwitch, LaneView, NeighborSnapshot, NeighborTrack};
use crate::dynamics::{step_bicycle, BicycleState, ControlInput, PointMassState};
use crate::prediction::{
    predict_frozen, prediction_error, LeaderPredictor, PredictedTrajectory, PredictionError, PredictionNote,
    TrajectoryHistory, VehicleId, PREDICTION_HORIZON,
};
use collision::{detect_collision, same_lane_gap, Collision, BODY_WIDTH};
use trace::{Event, EventKind, RunOutput, RunSummary, StepTrace};
use traffic::{following_accel, leader_in, surrounding_lane_change, Body, LaneBlend, SurroundVehicle};

/// Acceleration used to pull away from standstill once the road opens.
pub const LAUNCH_ACCEL: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    History(#[from] PredictionError),
    #[error(transparent)]
    Maneuver(#[from] ManeuverError),
}

/// Everything one frame produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub trace: StepTrace,
    pub events: Vec<Event>,
    pub collision: Option<Collision>,
    pub decision: Option<DecisionResult>,
}

struct PendingPrediction {
    predicted: PredictedTrajectory,
    actual: Vec<(f64, f64)>,
}

#[derive(Default)]
struct Tally {
    speed_sum: f64,
    frames: u64,
    lane_changes: usize,
    lane_change_starts: usize,
    decisions: usize,
    min_gap: f64,
    prediction_error_sum: f64,
    prediction_samples: usize,
    speed_violations: usize,
    lateral_violations: usize,
    fallbacks: usize,
    predictor_fallbacks: usize,
    iterations: usize,
    in_speed_violation: bool,
    in_lateral_violation: bool,
}

pub struct World {
    config: ScenarioConfig,
    frame: u64,
    ego: BicycleState,
    command: ControlInput,
    jerk: f64,
    phase: ManeuverPhase,
    warm: Option<ControlSolution>,
    vehicles: Vec<SurroundVehicle>,
    next_id: u64,
    rng: ChaCha8Rng,
    history: TrajectoryHistory,
    pending: Vec<PendingPrediction>,
    tally: Tally,
    collided: Option<(u64, Collision)>,
}

impl World {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Invalid)?;
        let g = config.road;
        let ego = BicycleState::cruising(config.ego.x, g.centerline(config.ego.lane), config.ego.speed);
        let mut world = Self {
            frame: 0,
            ego,
            command: ControlInput::default(),
            jerk: 0.0,
            phase: ManeuverPhase::LaneKeep { lane: config.ego.lane },
            warm: None,
            vehicles: Vec::new(),
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: TrajectoryHistory::new(),
            pending: Vec::new(),
            tally: Tally { min_gap: f64::INFINITY, ..Default::default() },
            collided: None,
            config,
        };
        world.populate();
        Ok(world)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn time(&self) -> f64 {
        self.frame as f64 * self.config.ts()
    }

    pub fn ego(&self) -> &BicycleState {
        &self.ego
    }

    pub fn phase(&self) -> ManeuverPhase {
        self.phase
    }

    pub fn vehicles(&self) -> &[SurroundVehicle] {
        &self.vehicles
    }

    pub fn collision(&self) -> Option<&(u64, Collision)> {
        self.collided.as_ref()
    }

    fn fresh_id(&mut self) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        id
    }

    fn sample_desired_speed(&mut self, lane: usize) -> f64 {
        let t = &self.config.traffic;
        let mean = t.lane_mean(lane);
        let (lo, hi) = (mean - t.speed_spread, mean + t.speed_spread);
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn populate(&mut self) {
        let scripted = self.config.traffic.vehicles.clone();
        for spec in scripted {
            let id = self.fresh_id();
            let desired = spec.desired_speed.unwrap_or(spec.speed).max(0.1);
            self.vehicles
                .push(SurroundVehicle::new(id, spec.lane, self.config.ego.x + spec.x, spec.speed, desired));
        }
        let t = self.config.traffic.clone();
        let per_lane = (t.density * t.window_m / 1000.0).round() as usize;
        if per_lane == 0 {
            return;
        }
        let spacing = t.window_m / per_lane as f64;
        let start = self.ego.x - t.window_m / 2.0;
        let body = self.config.control.body_length;
        for lane in 0..self.config.road.lanes {
            let mut placed: Vec<usize> = Vec::new();
            for k in 0..per_lane {
                let jitter = self.rng.random_range(-0.25..0.25);
                let desired = self.sample_desired_speed(lane);
                let x = start + (k as f64 + 0.5 + jitter) * spacing;
                let keep_out = if lane == self.config.ego.lane { t.start_clearance } else { 2.0 * body };
                let crowded = self.vehicles.iter().any(|v| v.lane == lane && (v.x - x).abs() < 2.0 * body);
                if (x - self.ego.x).abs() < keep_out || crowded {
                    continue;
                }
                let id = self.fresh_id();
                self.vehicles.push(SurroundVehicle::new(id, lane, x, desired, desired));
                placed.push(self.vehicles.len() - 1);
            }
            // Start each lane in a consistent state: nobody faster than
            // the vehicle ahead.
            placed.sort_by(|&a, &b| self.vehicles[b].x.total_cmp(&self.vehicles[a].x));
            let mut cap = f64::INFINITY;
            for i in placed {
                let v = &mut self.vehicles[i];
                v.speed = v.speed.min(cap);
                cap = v.speed;
            }
        }
    }

    fn ego_body(&self) -> Body {
        let mut lanes = 0;
        for l in self.config.road.occupied_lanes(self.ego.y, BODY_WIDTH / 2.0) {
            lanes |= 1 << l;
        }
        Body {
            id: VehicleId::EGO,
            x: self.ego.x,
            speed: self.ego.x_dot(),
            desired_speed: self.config.control.v_ref,
            lanes,
        }
    }

    fn surround_bodies(&self) -> Vec<Body> {
        self.vehicles.iter().map(SurroundVehicle::body).collect()
    }

    fn positions(&self) -> impl Iterator<Item = (VehicleId, f64, f64)> + '_ {
        let (g, blend) = (self.config.road, self.config.surround_lane_change.blend_s);
        self.vehicles.iter().map(move |v| (v.id, v.x, v.y(&g, blend)))
    }

    /// Advance one frame.
    pub fn step(&mut self, predictor: &mut LeaderPredictor) -> Result<StepOutcome, SimError> {
        let ts = self.config.ts();
        let g = self.config.road;
        let body = self.config.control.body_length;
        let t = self.time();
        let mut events = Vec::new();
        let event = |kind| Event { frame: self.frame, t, kind };

        // (1) history
        let ego_row = (VehicleId::EGO, self.ego.x, self.ego.y);
        let rows: Vec<_> = std::iter::once(ego_row).chain(self.positions()).collect();
        self.history.record_frame(self.frame, rows)?;

        // (2) snapshot
        let bodies = self.surround_bodies();
        let lane = g.nearest_lane(self.ego.y);
        let mut predictions: BTreeMap<VehicleId, PredictedTrajectory> = BTreeMap::new();
        let mut notes = Vec::new();
        let mut leader_track = |id: VehicleId, predictions: &mut BTreeMap<VehicleId, PredictedTrajectory>| {
            if !predictions.contains_key(&id) {
                let v = self.vehicles.iter().find(|v| v.id == id).expect("body ids come from vehicles");
                let y = v.y(&g, self.config.surround_lane_change.blend_s);
                let (traj, note) = predictor.predict_leader(&self.history, id, (v.x, y, v.speed), ts);
                if let Some(n) = note {
                    notes.push(n);
                }
                predictions.insert(id, traj);
            }
            predictions[&id].clone()
        };
        let mut view = |lane: Option<usize>, predictions: &mut BTreeMap<VehicleId, PredictedTrajectory>| -> LaneView {
            let Some(lane) = lane else { return LaneView::missing() };
            let leader = leader_in(&bodies, lane, self.ego.x, VehicleId::EGO).map(|b| {
                let traj = leader_track(b.id, predictions);
                NeighborTrack { id: b.id, x: b.x, speed: b.speed, predicted_x: traj.longitudinal().collect() }
            });
            let follower = traffic::follower_in(&bodies, lane, self.ego.x, VehicleId::EGO).map(|b| {
                let traj = predict_frozen(b.id, b.x, 0.0, b.speed, PREDICTION_HORIZON, ts);
                NeighborTrack { id: b.id, x: b.x, speed: b.speed, predicted_x: traj.longitudinal().collect() }
            });
            LaneView { exists: true, leader, follower }
        };
        let snapshot = NeighborSnapshot {
            left: view(g.left_of(lane), &mut predictions),
            current: view(Some(lane), &mut predictions),
            right: view(g.right_of(lane), &mut predictions),
        };
        // Leaders of every lane the ego overlaps or is heading to.
        let mut control_lanes: Vec<usize> = g.occupied_lanes(self.ego.y, BODY_WIDTH / 2.0).collect();
        control_lanes.push(self.phase.target_lane());
        let mut control_leaders = Vec::new();
        for l in control_lanes {
            if let Some(b) = leader_in(&bodies, l, self.ego.x, VehicleId::EGO) {
                control_leaders.push((b.id, b.x, leader_track(b.id, &mut predictions)));
            }
        }
        for note in notes {
            self.tally.predictor_fallbacks += 1;
            let (target, reason) = match note {
                PredictionNote::Timeout { target } => (target, "deadline missed".to_string()),
                PredictionNote::Failed { target, reason } => (target, reason),
            };
            events.push(event(EventKind::PredictorFallback { target, reason }));
        }
        let current_leader = snapshot.current.leader.clone();
        let leader_gap = current_leader.as_ref().map(|l| l.x - self.ego.x - body);
        if let Some(l) = &current_leader {
            self.pending.push(PendingPrediction { predicted: predictions[&l.id].clone(), actual: Vec::new() });
        }

        // (3) decision
        let triggered = self.config.lane_changes
            && !self.phase.is_changing()
            && leader_gap.is_some_and(|gap| gap < self.config.decision.reference_gap);
        let decision = triggered.then(|| {
            let pm = PointMassState::new(self.ego.x, self.ego.x_dot(), self.command.accel, self.jerk);
            select_lane(&snapshot, pm, &self.config.decision)
        });
        if decision.is_some() {
            self.tally.decisions += 1;
        }

        // (4) maneuver latch
        let switch = decision.as_ref().map_or(LaneSwitch::Keep, |d| d.lane_switch);
        let (phase, maneuver) = maneuver_tracker(&self.ego, switch, self.phase, &g)?;
        self.phase = phase;
        match maneuver {
            Some(ManeuverEvent::Started { from, to }) => {
                self.tally.lane_change_starts += 1;
                events.push(event(EventKind::LaneChangeStarted { from, to }));
            }
            Some(ManeuverEvent::Completed { lane }) => {
                self.tally.lane_changes += 1;
                events.push(event(EventKind::LaneChangeCompleted { lane }));
            }
            None => {}
        }

        // (5) control
        let leader_x = (!control_leaders.is_empty()).then(|| {
            (0..PREDICTION_HORIZON)
                .map(|k| control_leaders.iter().map(|(_, _, p)| p.points[k].0).fold(f64::INFINITY, f64::min))
                .collect::<Vec<f64>>()
        });
        let now_gap = control_leaders.iter().map(|(_, x, _)| x - self.ego.x - body).fold(f64::INFINITY, f64::min);
        let reference = ControlReference { y_ref: self.phase.y_ref(&g), leader_x, phase: self.phase };
        let start = self.ego;
        let (command, solution) = if self.ego.u < MIN_ROLLOUT_SPEED {
            let accel = if now_gap > self.config.control.safe_distance {
                LAUNCH_ACCEL
            } else {
                self.config.control.accel_min
            };
            self.warm = None;
            (ControlInput::new(accel, 0.0), None)
        } else {
            let u_d = decision.as_ref().map(|d| d.desired_accel);
            let sol = solve_control(
                &self.ego,
                &reference,
                self.warm.as_ref(),
                u_d,
                &self.config.control,
                &self.config.vehicle,
            );
            (sol.first_command(), Some(sol))
        };
        let fallback = solution.as_ref().is_some_and(|s| s.diverged);
        if fallback {
            self.tally.fallbacks += 1;
            events.push(event(EventKind::Fallback { reason: "control rollout diverged".into() }));
        }
        if let Some(s) = &solution {
            self.tally.iterations += s.iterations;
        }
        self.jerk = (command.accel - self.command.accel) / ts;
        self.command = command;
        self.ego = advance_ego(&self.ego, &command, &self.config.vehicle, ts);
        self.warm = solution.clone().filter(|s| !s.diverged);

        // (6) surrounding traffic, from the frame-start picture
        let mut bodies = bodies;
        let ego_start = Body { x: start.x, speed: start.x_dot(), ..self.ego_body() };
        bodies.push(Body { lanes: lane_mask(&g, start.y), ..ego_start });
        self.step_traffic(bodies);

        // prediction bookkeeping against the new positions
        let mut resolved = None;
        let blend_s = self.config.surround_lane_change.blend_s;
        let vehicles = &self.vehicles;
        self.pending.retain_mut(|p| {
            let Some(v) = vehicles.iter().find(|v| v.id == p.predicted.target) else { return false };
            p.actual.push((v.x, v.y(&g, blend_s)));
            if p.actual.len() < p.predicted.len() {
                return true;
            }
            let e = prediction_error(&p.predicted, &p.actual).expect("lengths match");
            resolved = Some(e.final_displacement());
            false
        });
        if let Some(e) = resolved {
            self.tally.prediction_error_sum += e;
            self.tally.prediction_samples += 1;
        }

        // (7) collisions and gaps
        let hit = detect_collision(self.ego.x, self.ego.y, self.positions(), body);
        let gap = same_lane_gap(self.ego.x, self.ego.y, self.positions(), body);
        self.tally.min_gap = self.tally.min_gap.min(gap);
        let t_next = t + ts;
        if let Some(c) = hit {
            self.collided = Some((self.frame, c));
            events.push(Event {
                frame: self.frame,
                t: t_next,
                kind: EventKind::Collision { other: c.other, dx: c.dx, dy: c.dy },
            });
        }
        let cp = &self.config.control;
        let speed_bad = self.ego.u < cp.speed_min || self.ego.u > cp.speed_max;
        let lateral_bad = self.ego.y < cp.y_min || self.ego.y > cp.y_max;
        self.tally.speed_violations += speed_bad as usize;
        self.tally.lateral_violations += lateral_bad as usize;
        if speed_bad && !self.tally.in_speed_violation {
            events.push(Event {
                frame: self.frame,
                t: t_next,
                kind: EventKind::ConstraintViolation { constraint: "speed".into(), value: self.ego.u },
            });
        }
        if lateral_bad && !self.tally.in_lateral_violation {
            events.push(Event {
                frame: self.frame,
                t: t_next,
                kind: EventKind::ConstraintViolation { constraint: "lateral".into(), value: self.ego.y },
            });
        }
        self.tally.in_speed_violation = speed_bad;
        self.tally.in_lateral_violation = lateral_bad;
        self.tally.speed_sum += self.ego.u;
        self.tally.frames += 1;

        // (8) trace
        let costs = decision.as_ref().map(|d| d.costs);
        let trace = StepTrace {
            frame: self.frame,
            t: t_next,
            x: self.ego.x,
            y: self.ego.y,
            yaw: self.ego.yaw,
            u: self.ego.u,
            v: self.ego.v,
            omega: self.ego.omega,
            accel: command.accel,
            steer: command.steer,
            lane: g.nearest_lane(self.ego.y),
            target_lane: self.phase.target_lane(),
            changing: self.phase.is_changing(),
            l_sw: decision.as_ref().map(|d| d.lane_switch.as_i8()),
            u_d: decision.as_ref().map(|d| d.desired_accel),
            j_left: costs.and_then(|c| c[0]),
            j_current: costs.and_then(|c| c[1]),
            j_right: costs.and_then(|c| c[2]),
            leader_id: current_leader.as_ref().map(|l| l.id.0),
            leader_gap,
            same_lane_gap: gap.is_finite().then_some(gap),
            prediction_error: resolved,
            control_cost: solution.as_ref().map(|s| s.cost),
            iterations: solution.as_ref().map_or(0, |s| s.iterations),
            fallback,
        };
        self.frame += 1;
        Ok(StepOutcome { trace, events, collision: hit, decision })
    }

    fn step_traffic(&mut self, mut bodies: Vec<Body>) {
        let ts = self.config.ts();
        let g = self.config.road;
        let body = self.config.control.body_length;
        let idm = self.config.idm;
        let lc = self.config.surround_lane_change;
        let accels: Vec<f64> =
            bodies[..self.vehicles.len()].iter().map(|b| following_accel(b, &bodies, g.lanes, body, &idm)).collect();
        for i in 0..self.vehicles.len() {
            let target =
                surrounding_lane_change(&self.vehicles[i], &bodies, &g, &idm, &lc, body, ts, &mut self.rng);
            if let Some(to) = target {
                let v = &mut self.vehicles[i];
                v.blend = Some(LaneBlend { from: v.lane, elapsed: 0.0 });
                v.lane = to;
                bodies[i].lanes = v.lane_mask();
            }
        }
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            v.accel = a;
            v.x += v.speed * ts;
            v.speed = (v.speed + a * ts).max(0.0);
            if let Some(b) = v.blend.as_mut() {
                b.elapsed += ts;
                if b.elapsed >= lc.blend_s - 1e-9 {
                    v.blend = None;
                }
            }
        }
        self.respawn();
    }

    fn respawn(&mut self) {
        let half = self.config.traffic.window_m / 2.0;
        let centre = self.ego.x;
        if self.config.traffic.density <= 0.0 {
            self.vehicles.retain(|v| (v.x - centre).abs() <= half);
            return;
        }
        let clearance = self.config.traffic.respawn_clearance;
        let lanes = self.config.road.lanes;
        for i in 0..self.vehicles.len() {
            let x = self.vehicles[i].x;
            let (new_x, ahead) = if x < centre - half {
                (centre + half, true)
            } else if x > centre + half {
                (centre - half, false)
            } else {
                continue;
            };
            let first = self.rng.random_range(0..lanes);
            let lane = (0..lanes).map(|k| (first + k) % lanes).find(|&l| {
                self.vehicles
                    .iter()
                    .enumerate()
                    .all(|(j, v)| j == i || v.lane_mask() & (1 << l) == 0 || (v.x - new_x).abs() >= clearance)
            });
            let Some(lane) = lane else { continue };
            let desired = self.sample_desired_speed(lane);
            let in_lane = self.vehicles.iter().enumerate().filter(|&(j, v)| j != i && v.lane_mask() & (1 << lane) != 0);
            // Match the neighbour the new vehicle would otherwise surprise.
            let speed = if ahead {
                in_lane.filter(|(_, v)| v.x < new_x).max_by(|a, b| a.1.x.total_cmp(&b.1.x)).map_or(desired, |(_, v)| desired.max(v.speed))
            } else {
                in_lane.filter(|(_, v)| v.x > new_x).min_by(|a, b| a.1.x.total_cmp(&b.1.x)).map_or(desired, |(_, v)| desired.min(v.speed))
            };
            let id = self.fresh_id();
            self.vehicles[i] = SurroundVehicle::new(id, lane, new_x, speed, desired);
        }
    }

    pub fn summary(&self) -> RunSummary {
        let t = &self.tally;
        RunSummary {
            name: self.config.name.clone(),
            seed: self.config.seed,
            predictor: self.config.predictor,
            lane_changes_enabled: self.config.lane_changes,
            frames: t.frames,
            simulated_s: t.frames as f64 * self.config.ts(),
            completed: self.collided.is_none(),
            collision_frame: self.collided.as_ref().map(|c| c.0),
            mean_speed: if t.frames > 0 { t.speed_sum / t.frames as f64 } else { self.ego.u },
            lane_changes: t.lane_changes,
            lane_change_starts: t.lane_change_starts,
            decisions: t.decisions,
            min_gap: t.min_gap.is_finite().then_some(t.min_gap),
            mean_prediction_error: (t.prediction_samples > 0)
                .then(|| t.prediction_error_sum / t.prediction_samples as f64),
            prediction_samples: t.prediction_samples,
            speed_violation_frames: t.speed_violations,
            lateral_violation_frames: t.lateral_violations,
            control_fallbacks: t.fallbacks,
            predictor_fallbacks: t.predictor_fallbacks,
            mean_iterations: if t.frames > 0 { t.iterations as f64 / t.frames as f64 } else { 0.0 },
        }
    }
}

fn lane_mask(g: &crate::road::LaneGeometry, y: f64) -> u32 {
    g.occupied_lanes(y, BODY_WIDTH / 2.0).fold(0, |m, l| m | (1 << l))
}

/// Plant step. Below the bicycle model's speed range the ego moves as a
/// straight-line point mass.
fn advance_ego(
    ego: &BicycleState,
    command: &ControlInput,
    vehicle: &crate::dynamics::BicycleParams,
    ts: f64,
) -> BicycleState {
    if ego.u >= MIN_ROLLOUT_SPEED {
        if let Ok(next) = step_bicycle(ego, command, vehicle, ts) {
            if next.u.is_finite() && next.u > 0.0 {
                return next;
            }
        }
    }
    let u = (ego.u + command.accel * ts).max(0.0);
    let travel = 0.5 * (ego.u + u) * ts;
    BicycleState {
        x: ego.x + travel * ego.yaw.cos(),
        y: ego.y + travel * ego.yaw.sin(),
        yaw: ego.yaw,
        u,
        v: 0.0,
        omega: 0.0,
    }
}

/// Run a scenario to its end or to the first collision.
pub fn run_scenario(config: &ScenarioConfig, predictor: &mut LeaderPredictor) -> Result<RunOutput, SimError> {
    let mut world = World::new(config.clone())?;
    let frames = config.frames();
    let mut trace = Vec::with_capacity(frames as usize);
    let mut events = Vec::new();
    for _ in 0..frames {
        let out = world.step(predictor)?;
        trace.push(out.trace);
        events.extend(out.events);
        if out.collision.is_some() {
            log::error!("{} seed {}: collision at frame {}", config.name, config.seed, world.frame() - 1);
            break;
        }
    }
    let mut summary = world.summary();
    summary.predictor = predictor.kind();
    Ok(RunOutput { trace, events, summary })
}
