//! Lane-change decision: per-lane driving cost from a longitudinal optimal
//! control problem, then a threshold/hysteresis rule picks the lane.
//!
//! For every candidate lane the ego vehicle is treated as a point mass that
//! follows that lane's leader (and, for adjacent lanes, is followed by that
//! lane's follower). The driving cost of a lane is the minimum over
//! acceleration sequences of
//!
//! ```text
//! sum_l |v - v_ref| / v_ref + lambda_j |j| + lambda_1 m1 + lambda_2 m2
//! ```
//!
//! subject to the point-mass dynamics, acceleration bounds, and a minimum
//! bumper-to-bumper gap of two body lengths to both neighbours. The cost is
//! convex and piecewise linear in the acceleration sequence, so the problem
//! is solved to optimality by [`pwl::PwlProblem`].

pub mod pwl;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_point_mass, PointMassState};
use crate::prediction::VehicleId;
use pwl::{Affine, PwlProblem, PwlTerm};

/// Weights and limits of the lane-cost problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionParams {
    pub v_ref: f64,
    pub time_headway: f64,
    pub standstill_distance: f64,
    pub jerk_weight: f64,
    pub leader_weight: f64,
    pub follower_weight: f64,
    /// Current-lane cost at or below which no lane change is considered.
    pub cost_threshold: f64,
    /// Relative benefit an adjacent lane must offer.
    pub lane_change_penalty: f64,
    /// Horizon length in steps.
    pub horizon: usize,
    pub reference_gap: f64,
    pub body_length: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub ts: f64,
    /// Steps per move-blocking block.
    pub block_len: usize,
    /// Exact-penalty weight on the minimum-gap constraint.
    pub gap_penalty: f64,
}

impl Default for DecisionParams {
    fn default() -> Self {
        Self {
            v_ref: 27.0,
            time_headway: 1.5,
            standstill_distance: 5.0,
            jerk_weight: 0.1,
            leader_weight: 1.0,
            follower_weight: 0.2,
            cost_threshold: 0.3,
            lane_change_penalty: 0.1,
            horizon: 50,
            reference_gap: 50.0,
            body_length: 5.0,
            accel_min: -4.5,
            accel_max: 2.6,
            ts: 0.1,
            block_len: 5,
            gap_penalty: 1e3,
        }
    }
}

/// Constraint margin folded into the exact penalty so an optimum that rides
/// the gap limit still passes the strict post-hoc check.
const GAP_MARGIN: f64 = 0.01;

impl DecisionParams {
    /// Hard minimum gap inside the lane-cost problem (two body lengths).
    pub fn ocp_min_gap(&self) -> f64 {
        2.0 * self.body_length
    }

    /// Gap both adjacent-lane neighbours must exceed before a lane change (three body lengths).
    pub fn gate_gap(&self) -> f64 {
        3.0 * self.body_length
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("v_ref", self.v_ref),
            ("time_headway", self.time_headway),
            ("standstill_distance", self.standstill_distance),
            ("jerk_weight", self.jerk_weight),
            ("leader_weight", self.leader_weight),
            ("follower_weight", self.follower_weight),
            ("reference_gap", self.reference_gap),
            ("body_length", self.body_length),
            ("accel_max", self.accel_max),
            ("ts", self.ts),
            ("gap_penalty", self.gap_penalty),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("decision.{name} must be positive, got {v}"));
            }
        }
        if !(self.cost_threshold >= 0.0 && self.lane_change_penalty >= 0.0) {
            return Err("decision.cost_threshold and lane_change_penalty must be non-negative".into());
        }
        if !(self.accel_min < 0.0) {
            return Err(format!("decision.accel_min must be negative, got {}", self.accel_min));
        }
        if self.horizon == 0 || self.block_len == 0 {
            return Err("decision.horizon and block_len must be at least 1".into());
        }
        Ok(())
    }
}

pub fn desired_distance(speed: f64, params: &DecisionParams) -> f64 {
    params.standstill_distance + params.time_headway * speed
}

/// A neighbouring vehicle seen by the decision layer. `predicted_x[k]` is the
/// centre position at frame `t + k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTrack {
    pub id: VehicleId,
    pub x: f64,
    pub speed: f64,
    pub predicted_x: Vec<f64>,
}

impl NeighborTrack {
    /// Position at horizon step `l` (0 = now). Beyond the prediction the
    /// track is extended at its current speed.
    pub fn position_at(&self, l: usize, ts: f64) -> f64 {
        if l == 0 {
            self.x
        } else if let Some(&x) = self.predicted_x.get(l - 1) {
            x
        } else {
            let last = self.predicted_x.last().copied().unwrap_or(self.x);
            last + (l - self.predicted_x.len()) as f64 * ts * self.speed
        }
    }
}

/// Neighbourhood of one lane relative to the ego vehicle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneView {
    pub exists: bool,
    pub leader: Option<NeighborTrack>,
    pub follower: Option<NeighborTrack>,
}

impl LaneView {
    pub fn free() -> Self {
        Self { exists: true, leader: None, follower: None }
    }

    pub fn missing() -> Self {
        Self::default()
    }

    /// Bumper-to-bumper gap to the leader; infinite when there is none.
    pub fn leader_gap(&self, ego_x: f64, body_length: f64) -> f64 {
        self.leader
            .as_ref()
            .map_or(f64::INFINITY, |l| (l.x - ego_x - body_length).max(0.0))
    }

    pub fn follower_gap(&self, ego_x: f64, body_length: f64) -> f64 {
        self.follower
            .as_ref()
            .map_or(f64::INFINITY, |f| (ego_x - f.x - body_length).max(0.0))
    }
}

/// Surroundings in the three lanes at the current frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeighborSnapshot {
    pub left: LaneView,
    pub current: LaneView,
    pub right: LaneView,
}

/// `-1` right, `0` keep, `1` left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LaneSwitch {
    Right,
    #[default]
    Keep,
    Left,
}

impl LaneSwitch {
    pub fn as_i8(self) -> i8 {
        match self {
            LaneSwitch::Right => -1,
            LaneSwitch::Keep => 0,
            LaneSwitch::Left => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionResult {
    pub lane_switch: LaneSwitch,
    /// First acceleration of the chosen lane's optimal sequence.
    pub desired_accel: f64,
    /// Driving costs `[left, current, right]`; `None` when not evaluated.
    pub costs: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneOcpSolution {
    /// Per-step accelerations over the horizon.
    pub accels: Vec<f64>,
    /// Driving cost, infinite when the gap constraints cannot be met.
    pub cost: f64,
    /// Driving cost plus exact gap penalty, the quantity actually minimised.
    pub penalized_cost: f64,
    pub feasible: bool,
    /// States at horizon steps `0..=T`.
    pub states: Vec<PointMassState>,
}

impl LaneOcpSolution {
    pub fn first_accel(&self) -> f64 {
        self.accels.first().copied().unwrap_or(0.0)
    }
}

/// Longitudinal picture of the neighbours at one horizon step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageNeighbors {
    /// Leader centre position, `+inf` when absent.
    pub leader_x: f64,
    /// Follower centre position, `-inf` when absent.
    pub follower_x: f64,
    /// Follower speed (`v_ref` when absent).
    pub follower_speed: f64,
}

impl StageNeighbors {
    pub fn open_road(params: &DecisionParams) -> Self {
        Self {
            leader_x: f64::INFINITY,
            follower_x: f64::NEG_INFINITY,
            follower_speed: params.v_ref,
        }
    }
}

/// Driving cost of one horizon step. The follower term only counts when the
/// lane being evaluated is not the current one.
pub fn stage_cost(
    state: &PointMassState,
    neighbors: &StageNeighbors,
    adjacent_lane: bool,
    params: &DecisionParams,
) -> f64 {
    let b = params.body_length;
    let speed_term = ((state.v - params.v_ref) / params.v_ref).abs();
    let jerk_term = params.jerk_weight * state.j.abs();
    let leader_gap = neighbors.leader_x - state.s - b;
    let m1 = ((desired_distance(state.v, params) - leader_gap) / params.reference_gap).max(0.0);
    let m2 = if adjacent_lane {
        let follower_gap = state.s - neighbors.follower_x - b;
        let desired = desired_distance(neighbors.follower_speed, params);
        ((desired - follower_gap) / params.reference_gap).max(0.0)
    } else {
        0.0
    };
    speed_term + jerk_term + params.leader_weight * m1 + params.follower_weight * m2
}

fn stage_neighbors(lane: &LaneView, l: usize, params: &DecisionParams) -> StageNeighbors {
    let mut n = StageNeighbors::open_road(params);
    if let Some(leader) = &lane.leader {
        n.leader_x = leader.position_at(l, params.ts);
    }
    if let Some(f) = &lane.follower {
        // followers are extrapolated at constant speed
        n.follower_x = f.x + l as f64 * params.ts * f.speed;
        n.follower_speed = f.speed;
    }
    n
}

/// Cost of a fixed acceleration sequence, by direct rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneCostBreakdown {
    pub cost: f64,
    pub penalty: f64,
    pub min_leader_gap: f64,
    pub min_follower_gap: f64,
    pub states: Vec<PointMassState>,
}

impl LaneCostBreakdown {
    pub fn penalized(&self) -> f64 {
        self.cost + self.penalty
    }
}

pub fn lane_cost(
    ego: PointMassState,
    accels: &[f64],
    lane: &LaneView,
    adjacent_lane: bool,
    params: &DecisionParams,
) -> LaneCostBreakdown {
    let b = params.body_length;
    let threshold = params.ocp_min_gap() + GAP_MARGIN;
    let mut state = ego;
    let mut states = vec![state];
    let mut cost = stage_cost(&state, &stage_neighbors(lane, 0, params), adjacent_lane, params);
    let mut penalty = 0.0;
    let mut min_leader_gap = f64::INFINITY;
    let mut min_follower_gap = f64::INFINITY;
    for (k, &u) in accels.iter().enumerate() {
        state = step_point_mass(state, u, params.ts);
        states.push(state);
        let n = stage_neighbors(lane, k + 1, params);
        cost += stage_cost(&state, &n, adjacent_lane, params);
        let leader_gap = n.leader_x - state.s - b;
        min_leader_gap = min_leader_gap.min(leader_gap);
        penalty += params.gap_penalty * (threshold - leader_gap).max(0.0);
        if adjacent_lane {
            let follower_gap = state.s - n.follower_x - b;
            min_follower_gap = min_follower_gap.min(follower_gap);
            penalty += params.gap_penalty * (threshold - follower_gap).max(0.0);
        }
    }
    LaneCostBreakdown { cost, penalty, min_leader_gap, min_follower_gap, states }
}

fn block_count(params: &DecisionParams) -> usize {
    params.horizon.div_ceil(params.block_len)
}

/// Piecewise-linear form of the penalised lane cost over the blocked
/// accelerations. The constant first stage is left out.
fn build_problem(ego: PointMassState, lane: &LaneView, adjacent_lane: bool, params: &DecisionParams) -> PwlProblem {
    let nb = block_count(params);
    let ts = params.ts;
    let b = params.body_length;
    let threshold = params.ocp_min_gap() + GAP_MARGIN;
    let mut s = Affine::constant(nb, ego.s);
    let mut v = Affine::constant(nb, ego.v);
    let mut a = Affine::constant(nb, ego.a);
    let mut terms = Vec::new();
    for k in 0..params.horizon {
        let u = Affine::variable(nb, k / params.block_len);
        let mut s_next = s.clone();
        s_next.add_scaled(&v, ts);
        let mut v_next = v.clone();
        v_next.add_scaled(&a, ts);
        let mut j_next = u.scaled(1.0 / ts);
        j_next.add_scaled(&a, -1.0 / ts);
        s = s_next;
        v = v_next;
        a = u;

        terms.push(PwlTerm::abs(v.scaled(1.0 / params.v_ref).plus_const(-1.0)));
        if j_next.coef.iter().any(|c| *c != 0.0) || j_next.constant != 0.0 {
            terms.push(PwlTerm::abs(j_next.scaled(params.jerk_weight)));
        }
        let n = stage_neighbors(lane, k + 1, params);
        if n.leader_x.is_finite() {
            // (d0 + th v - (xl - s - b)) / ref
            let mut e = v.scaled(params.time_headway);
            e.add_scaled(&s, 1.0);
            let e = e.plus_const(params.standstill_distance - n.leader_x + b);
            terms.push(PwlTerm::hinge(e.scaled(params.leader_weight / params.reference_gap)));
            let gap_violation = s.clone().plus_const(threshold - n.leader_x + b);
            terms.push(PwlTerm::hinge(gap_violation.scaled(params.gap_penalty)));
        }
        if adjacent_lane && n.follower_x.is_finite() {
            let desired = desired_distance(n.follower_speed, params);
            let e = s.scaled(-1.0).plus_const(desired + n.follower_x + b);
            terms.push(PwlTerm::hinge(e.scaled(params.follower_weight / params.reference_gap)));
            let gap_violation = s.scaled(-1.0).plus_const(threshold + n.follower_x + b);
            terms.push(PwlTerm::hinge(gap_violation.scaled(params.gap_penalty)));
        }
    }
    PwlProblem {
        lower: vec![params.accel_min; nb],
        upper: vec![params.accel_max; nb],
        terms,
    }
}

fn expand_blocks(z: &[f64], params: &DecisionParams) -> Vec<f64> {
    (0..params.horizon).map(|k| z[k / params.block_len]).collect()
}

/// Optimal driving cost of a lane. `warm` is an optional per-step
/// acceleration guess.
pub fn evaluate_lane(
    ego: PointMassState,
    lane: &LaneView,
    adjacent_lane: bool,
    params: &DecisionParams,
    warm: Option<&[f64]>,
) -> LaneOcpSolution {
    let problem = build_problem(ego, lane, adjacent_lane, params);
    let nb = problem.dim();
    let start: Vec<f64> = match warm {
        Some(w) if !w.is_empty() => (0..nb)
            .map(|i| w.get(i * params.block_len).copied().unwrap_or(0.0))
            .collect(),
        _ => vec![0.0; nb],
    };
    let solved = problem.minimize(&start);

    // Compare against the canonical starting points; keep the cheapest.
    let mut best = expand_blocks(&solved.z, params);
    let mut best_eval = lane_cost(ego, &best, lane, adjacent_lane, params);
    for candidate in [0.0, params.accel_min] {
        let seq = vec![candidate; params.horizon];
        let eval = lane_cost(ego, &seq, lane, adjacent_lane, params);
        if eval.penalized() < best_eval.penalized() {
            best = seq;
            best_eval = eval;
        }
    }

    let min_gap = params.ocp_min_gap();
    let feasible = best_eval.min_leader_gap > min_gap && (!adjacent_lane || best_eval.min_follower_gap > min_gap);
    LaneOcpSolution {
        cost: if feasible { best_eval.cost } else { f64::INFINITY },
        penalized_cost: best_eval.penalized(),
        feasible,
        states: best_eval.states,
        accels: best,
    }
}

/// Whether both adjacent-lane gaps leave room to start a lane change.
pub fn safety_gate(lane: &LaneView, ego_x: f64, params: &DecisionParams) -> bool {
    let gate = params.gate_gap();
    lane.exists
        && lane.leader_gap(ego_x, params.body_length) > gate
        && lane.follower_gap(ego_x, params.body_length) > gate
}

/// Threshold/hysteresis rule over lane costs. `right` and `left` are only
/// evaluated when the current lane is too expensive, and return
/// `(cost, desired_accel)` with infinite cost for lanes that are missing or
/// gated out.
pub fn choose_lane<R, L>(
    current: (f64, f64),
    right: R,
    left: L,
    params: &DecisionParams,
) -> (LaneSwitch, f64, Option<f64>, Option<f64>)
where
    R: FnOnce() -> (f64, f64),
    L: FnOnce() -> (f64, f64),
{
    let (j_c, u_c) = current;
    if j_c <= params.cost_threshold {
        return (LaneSwitch::Keep, u_c, None, None);
    }
    let (j_r, u_r) = right();
    let (j_l, u_l) = left();
    let k = 1.0 + params.lane_change_penalty;
    let choice = if k * j_r < j_c && j_r <= j_l {
        (LaneSwitch::Right, u_r)
    } else if k * j_l < j_c && j_l < j_r {
        (LaneSwitch::Left, u_l)
    } else {
        (LaneSwitch::Keep, u_c)
    };
    (choice.0, choice.1, Some(j_r), Some(j_l))
}

/// Full decision for one frame.
pub fn select_lane(snapshot: &NeighborSnapshot, ego: PointMassState, params: &DecisionParams) -> DecisionResult {
    let current = evaluate_lane(ego, &snapshot.current, false, params, None);
    let adjacent = |lane: &LaneView| -> (f64, f64) {
        if !safety_gate(lane, ego.s, params) {
            return (f64::INFINITY, current.first_accel());
        }
        let sol = evaluate_lane(ego, lane, true, params, None);
        (sol.cost, sol.first_accel())
    };
    let (lane_switch, desired_accel, j_r, j_l) = choose_lane(
        (current.cost, current.first_accel()),
        || adjacent(&snapshot.right),
        || adjacent(&snapshot.left),
        params,
    );
    DecisionResult {
        lane_switch,
        desired_accel: desired_accel.clamp(params.accel_min, params.accel_max),
        costs: [j_l, Some(current.cost), j_r],
    }
}
