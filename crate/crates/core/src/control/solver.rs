//! Single-shooting solver for the control OCP.
//!
//! Decision vector `z = [a_0 .. a_{N-1}, delta_0 .. delta_{N-1}]` holds one
//! value per move block. RK4 forward sensitivities give the exact gradient
//! and a Gauss-Newton Hessian; a projected Newton step with an active set on
//! the input box and a monotone Armijo search does the rest.

use nalgebra::{DMatrix, DVector, Matrix6xX};

use super::{control_stage_cost, state_penalty, ControlParams, ControlReference};
use crate::dynamics::{step_bicycle, step_bicycle_with_sensitivity, BicycleParams, BicycleState, ControlInput};

/// Below this speed a rollout is taken to have come to rest; the bicycle
/// model is singular at standstill.
pub const MIN_ROLLOUT_SPEED: f64 = 0.5;

const ARMIJO: f64 = 1e-4;
/// Half-width (m) of the smoothed safety-hinge kink used for curvature only.
const KINK_WIDTH: f64 = 1.0;
const MAX_BACKTRACKS: usize = 30;
const CHANNEL_BACKTRACKS: usize = 5;
/// Iterations stop once one of them gains less than this fraction.
const RELATIVE_PROGRESS: f64 = 1e-8;

/// Post-hoc count of horizon steps outside the soft bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateViolations {
    pub speed: usize,
    pub lateral: usize,
    pub gap_floor: usize,
}

impl StateViolations {
    pub fn any(&self) -> bool {
        self.speed + self.lateral + self.gap_floor > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    /// Per-step commands over the horizon.
    pub accels: Vec<f64>,
    pub steers: Vec<f64>,
    /// Block values, kept for warm starting.
    pub blocks: Vec<f64>,
    /// `states[k]` follows `inputs[k]`.
    pub states: Vec<BicycleState>,
    /// Penalized cost of the returned sequence.
    pub cost: f64,
    /// Penalized cost of the start the iterations began from.
    pub start_cost: f64,
    pub iterations: usize,
    pub diverged: bool,
    pub violations: StateViolations,
}

impl ControlSolution {
    pub fn first_command(&self) -> ControlInput {
        ControlInput::new(self.accels[0], self.steers[0])
    }

    /// Per-step sequence advanced by one frame and re-blocked.
    pub fn shifted(&self, params: &ControlParams) -> Vec<f64> {
        let shift = |seq: &[f64]| -> Vec<f64> {
            let mut s: Vec<f64> = seq.iter().skip(1).copied().collect();
            s.push(*seq.last().unwrap_or(&0.0));
            s.resize(params.horizon, *s.last().unwrap_or(&0.0));
            s
        };
        let mut z = block_average(&shift(&self.accels), params.block_len);
        z.extend(block_average(&shift(&self.steers), params.block_len));
        z
    }
}

fn block_average(seq: &[f64], block_len: usize) -> Vec<f64> {
    seq.chunks(block_len).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// The control OCP at one frame, as a function of the block vector.
pub struct ControlProblem<'a> {
    current: BicycleState,
    reference: &'a ControlReference,
    params: &'a ControlParams,
    vehicle: &'a BicycleParams,
    blocks: usize,
    /// Constant Hessian of the input magnitude and rate terms, `z' Q z`.
    input_quad: DMatrix<f64>,
}

struct Linearization {
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
}

impl<'a> ControlProblem<'a> {
    pub fn new(
        current: BicycleState,
        reference: &'a ControlReference,
        params: &'a ControlParams,
        vehicle: &'a BicycleParams,
    ) -> Self {
        let blocks = params.block_count();
        let n = 2 * blocks;
        let mut q = DMatrix::zeros(n, n);
        for b in 0..blocks {
            let len = params.block_len.min(params.horizon - b * params.block_len) as f64;
            q[(b, b)] += params.accel_weight * len;
            q[(blocks + b, blocks + b)] += params.steer_weight * len;
            if b > 0 {
                for (off, w) in [(0, params.accel_rate_weight), (blocks, params.steer_rate_weight)] {
                    let (i, j) = (off + b, off + b - 1);
                    q[(i, i)] += w;
                    q[(j, j)] += w;
                    q[(i, j)] -= w;
                    q[(j, i)] -= w;
                }
            }
        }
        Self { current, reference, params, vehicle, blocks, input_quad: q }
    }

    pub fn dim(&self) -> usize {
        2 * self.blocks
    }

    pub fn lower(&self) -> Vec<f64> {
        let mut lo = vec![self.params.accel_min; self.blocks];
        lo.extend(std::iter::repeat_n(-self.params.steer_max(), self.blocks));
        lo
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut hi = vec![self.params.accel_max; self.blocks];
        hi.extend(std::iter::repeat_n(self.params.steer_max(), self.blocks));
        hi
    }

    pub fn project(&self, z: &mut [f64]) {
        for ((zi, lo), hi) in z.iter_mut().zip(self.lower()).zip(self.upper()) {
            *zi = zi.clamp(lo, hi);
        }
    }

    pub fn inputs(&self, z: &[f64]) -> Vec<ControlInput> {
        (0..self.params.horizon)
            .map(|k| {
                let b = k / self.params.block_len;
                ControlInput::new(z[b], z[self.blocks + b])
            })
            .collect()
    }

    /// Forward simulation, `None` if it blows up. A rollout that brakes below
    /// [`MIN_ROLLOUT_SPEED`] stops and holds for the rest of the horizon.
    pub fn rollout(&self, z: &[f64]) -> Option<Vec<BicycleState>> {
        let mut x = self.current;
        let mut stopped = false;
        let mut out = Vec::with_capacity(self.params.horizon);
        for input in self.inputs(z) {
            if !stopped {
                (x, stopped) = self.advance(&x, &input)?;
            }
            out.push(x);
        }
        Some(out)
    }

    fn advance(&self, x: &BicycleState, input: &ControlInput) -> Option<(BicycleState, bool)> {
        let next = step_bicycle(x, input, self.vehicle, self.params.ts).ok();
        match next {
            Some(n) if rollout_ok(&n) => Some((n, false)),
            Some(n) if !finite(&n) => None,
            _ => Some((come_to_rest(x, input.accel, self.params.ts), true)),
        }
    }

    /// Penalized cost; infinite for a diverged rollout.
    pub fn cost(&self, z: &[f64]) -> f64 {
        match self.rollout(z) {
            Some(states) => self.cost_of(&states, &self.inputs(z)),
            None => f64::INFINITY,
        }
    }

    fn cost_of(&self, states: &[BicycleState], inputs: &[ControlInput]) -> f64 {
        control_stage_cost(states, inputs, self.reference, self.params) + state_penalty(states, self.reference, self.params)
    }

    /// Exact gradient of [`Self::cost`].
    pub fn gradient(&self, z: &[f64]) -> Option<Vec<f64>> {
        self.linearize(z).map(|l| l.gradient.iter().copied().collect())
    }

    fn linearize(&self, z: &[f64]) -> Option<Linearization> {
        let p = self.params;
        let n = self.dim();
        let nb = self.blocks;
        let inputs = self.inputs(z);
        let zv = DVector::from_column_slice(z);

        let mut sens = Matrix6xX::<f64>::zeros(n);
        let mut next_sens = Matrix6xX::<f64>::zeros(n);
        let mut row_buf: Vec<f64> = Vec::with_capacity(n * 3 * p.horizon);
        let mut gradient = DVector::<f64>::zeros(n);
        let mut x = self.current;

        let (wv, wy) = (p.speed_weight.sqrt(), p.lateral_weight.sqrt());
        let (wp, ws, wg) = (p.state_penalty.sqrt(), p.speed_penalty.sqrt(), p.gap_floor_penalty.sqrt());
        // Residual r with gradient scale * row(channel); adds 2 r grad to the gradient.
        let push = |row_buf: &mut Vec<f64>, r: f64, scale: f64, channel: usize, sens: &Matrix6xX<f64>, gradient: &mut DVector<f64>| {
            let start = row_buf.len();
            row_buf.extend(sens.row(channel).iter().map(|s| s * scale));
            for (g, s) in gradient.iter_mut().zip(&row_buf[start..]) {
                *g += 2.0 * r * s;
            }
        };

        let mut stopped = false;
        for (k, input) in inputs.iter().enumerate() {
            if !stopped {
                let step = step_bicycle_with_sensitivity(&x, input, self.vehicle, p.ts).ok();
                match step {
                    Some((next, phi, gamma)) if rollout_ok(&next) => {
                        let b = k / p.block_len;
                        next_sens.gemm(1.0, &phi, &sens, 0.0);
                        for r in 0..6 {
                            next_sens[(r, b)] += gamma[(r, 0)];
                            next_sens[(r, nb + b)] += gamma[(r, 1)];
                        }
                        std::mem::swap(&mut sens, &mut next_sens);
                        x = next;
                    }
                    Some((next, _, _)) if !finite(&next) => return None,
                    _ => {
                        // At rest the state no longer responds to the inputs,
                        // apart from where it stopped.
                        x = come_to_rest(&x, input.accel, p.ts);
                        stopped = true;
                        for r in 1..6 {
                            sens.row_mut(r).fill(0.0);
                        }
                    }
                }
            }

            push(&mut row_buf, wv * (x.u - p.v_ref), wv, 3, &sens, &mut gradient);
            push(&mut row_buf, wy * (x.y - self.reference.y_ref), wy, 1, &sens, &mut gradient);
            if x.u < p.speed_min {
                push(&mut row_buf, ws * (p.speed_min - x.u), -ws, 3, &sens, &mut gradient);
            } else if x.u > p.speed_max {
                push(&mut row_buf, ws * (x.u - p.speed_max), ws, 3, &sens, &mut gradient);
            }
            if x.y < p.y_min {
                push(&mut row_buf, wp * (p.y_min - x.y), -wp, 1, &sens, &mut gradient);
            } else if x.y > p.y_max {
                push(&mut row_buf, wp * (x.y - p.y_max), wp, 1, &sens, &mut gradient);
            }
            let gap = self.reference.leader_gap(k + 1, x.x, p.body_length);
            if gap < p.safe_distance && p.safety_weight > 0.0 {
                for (g, s) in gradient.iter_mut().zip(sens.row(0).iter()) {
                    *g += p.safety_weight * s;
                }
            }
            if (gap - p.safe_distance).abs() < KINK_WIDTH && p.safety_weight > 0.0 {
                // The hinge has no curvature, which lets Newton steps leap
                // across its kink. Borrow the curvature of a smoothed kink.
                let w = (p.safety_weight / (2.0 * KINK_WIDTH)).sqrt();
                row_buf.extend(sens.row(0).iter().map(|s| s * w));
            }
            if gap < p.gap_floor {
                push(&mut row_buf, wg * (p.gap_floor - gap), wg, 0, &sens, &mut gradient);
            }
        }

        let q2 = &self.input_quad * 2.0;
        gradient += &q2 * &zv;
        let mut hessian = q2;
        let m = row_buf.len() / n;
        if m > 0 {
            let rows = DMatrix::from_column_slice(n, m, &row_buf);
            hessian.gemm(2.0, &rows, &rows.transpose(), 1.0);
        }
        Some(Linearization { gradient, hessian })
    }
}

fn finite(x: &BicycleState) -> bool {
    [x.x, x.y, x.yaw, x.u, x.v, x.omega].iter().all(|c| c.is_finite())
}

fn rollout_ok(x: &BicycleState) -> bool {
    x.u >= MIN_ROLLOUT_SPEED && finite(x)
}

/// Standstill reached from `x` while braking at `accel` within one step.
fn come_to_rest(x: &BicycleState, accel: f64, ts: f64) -> BicycleState {
    let travel = if accel < 0.0 { (x.u * x.u / (-2.0 * accel)).min(x.u * ts) } else { x.u * ts };
    let (sin_yaw, cos_yaw) = x.yaw.sin_cos();
    BicycleState {
        x: x.x + travel * cos_yaw,
        y: x.y + travel * sin_yaw,
        yaw: x.yaw,
        u: 0.0,
        v: 0.0,
        omega: 0.0,
    }
}

/// Result of the inner iterations from one start.
struct Descent {
    z: Vec<f64>,
    cost: f64,
    iterations: usize,
}

fn line_search(
    problem: &ControlProblem<'_>,
    z: &[f64],
    cost: f64,
    d: &[f64],
    g: &DVector<f64>,
    backtracks: usize,
) -> Option<(Vec<f64>, f64, f64)> {
    let mut alpha = 1.0;
    for _ in 0..backtracks {
        let mut trial: Vec<f64> = z.iter().zip(d).map(|(zi, di)| zi + alpha * di).collect();
        problem.project(&mut trial);
        let slope: f64 = trial.iter().zip(z).zip(g.iter()).map(|((t, zi), gi)| gi * (t - zi)).sum();
        let c = problem.cost(&trial);
        if c < cost && c <= cost + ARMIJO * slope.min(0.0) {
            return Some((trial, c, alpha));
        }
        alpha *= 0.5;
    }
    None
}

fn projected_newton(problem: &ControlProblem<'_>, start: Vec<f64>, start_cost: f64, max_iterations: usize) -> Descent {
    let n = problem.dim();
    let nb = n / 2;
    let (lo, hi) = (problem.lower(), problem.upper());
    let mut z = start;
    let mut cost = start_cost;
    let mut damping = 1e-8;
    let mut iterations = 0;

    while iterations < max_iterations {
        let Some(lin) = problem.linearize(&z) else { break };
        iterations += 1;
        let before = cost;
        let g = &lin.gradient;
        let width: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 1e-9 * (h - l)).collect();
        let active: Vec<bool> = (0..n)
            .map(|i| (z[i] <= lo[i] + width[i] && g[i] > 0.0) || (z[i] >= hi[i] - width[i] && g[i] < 0.0))
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();

        let scale = lin.hessian.diagonal().max().max(1e-12);
        let diag = |i: usize| lin.hessian[(i, i)].max(scale * 1e-12);
        let mut accepted = None;
        while damping < 1e6 {
            let mut d = vec![0.0; n];
            for i in 0..n {
                if active[i] {
                    d[i] = -g[i] / diag(i);
                }
            }
            if !free.is_empty() {
                let m = free.len();
                let mut h = DMatrix::<f64>::zeros(m, m);
                let mut rhs = DVector::<f64>::zeros(m);
                for (a, &i) in free.iter().enumerate() {
                    rhs[a] = -g[i];
                    for (b, &j) in free.iter().enumerate() {
                        h[(a, b)] = lin.hessian[(i, j)];
                    }
                    h[(a, a)] += damping * diag(i);
                }
                let Some(chol) = h.cholesky() else {
                    damping *= 10.0;
                    continue;
                };
                let step = chol.solve(&rhs);
                for (a, &i) in free.iter().enumerate() {
                    d[i] = step[a];
                }
            }
            if let Some((trial, c, alpha)) = line_search(problem, &z, cost, &d, g, MAX_BACKTRACKS) {
                z = trial;
                cost = c;
                accepted = Some((d, alpha));
                damping = (damping / 3.0).max(1e-10);
                break;
            }
            damping *= 10.0;
        }
        let Some((d, alpha)) = accepted else { break };
        if alpha < 1.0 {
            // A short step is usually a longitudinal kink; let each channel
            // finish its own part of the Newton step.
            for range in [nb..n, 0..nb] {
                let mut part = vec![0.0; n];
                part[range.clone()].copy_from_slice(&d[range]);
                if let Some((trial, c, _)) = line_search(problem, &z, cost, &part, g, CHANNEL_BACKTRACKS) {
                    z = trial;
                    cost = c;
                }
            }
        }
        if before - cost <= RELATIVE_PROGRESS * (1.0 + cost.abs()) {
            break;
        }
    }
    Descent { z, cost, iterations }
}

/// Solve the control OCP from `current`.
///
/// Candidate starts are the shifted warm start, the same with the
/// acceleration channel set to `desired_accel`, straight coasting and
/// straight max braking; iterations begin from the cheapest.
pub fn solve_control(
    current: &BicycleState,
    reference: &ControlReference,
    warm: Option<&ControlSolution>,
    desired_accel: Option<f64>,
    params: &ControlParams,
    vehicle: &BicycleParams,
) -> ControlSolution {
    let problem = ControlProblem::new(*current, reference, params, vehicle);
    let nb = params.block_count();

    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(4);
    if let Some(w) = warm.filter(|w| w.blocks.len() == problem.dim()) {
        let shifted = w.shifted(params);
        if let Some(ud) = desired_accel {
            let mut seeded = shifted.clone();
            seeded[..nb].fill(ud);
            candidates.push(seeded);
        }
        candidates.push(shifted);
    } else if let Some(ud) = desired_accel {
        let mut seeded = vec![0.0; problem.dim()];
        seeded[..nb].fill(ud);
        candidates.push(seeded);
    }
    candidates.push(vec![0.0; problem.dim()]);
    let mut brake = vec![0.0; problem.dim()];
    brake[..nb].fill(params.accel_min);
    candidates.push(brake);

    let mut best: Option<(Vec<f64>, f64)> = None;
    if current.u >= MIN_ROLLOUT_SPEED {
        for mut z in candidates {
            problem.project(&mut z);
            let c = problem.cost(&z);
            if c.is_finite() && best.as_ref().is_none_or(|(_, bc)| c < *bc) {
                best = Some((z, c));
            }
        }
    }

    let Some((start, start_cost)) = best else {
        return fallback(&problem, params);
    };
    let descent = projected_newton(&problem, start, start_cost, params.max_iterations);
    finish(&problem, params, descent.z, descent.cost, start_cost, descent.iterations, false)
}

/// Straight-line max braking, flagged as diverged.
fn fallback(problem: &ControlProblem<'_>, params: &ControlParams) -> ControlSolution {
    let mut z = vec![0.0; problem.dim()];
    z[..params.block_count()].fill(params.accel_min);
    finish(problem, params, z, f64::INFINITY, f64::INFINITY, 0, true)
}

fn finish(
    problem: &ControlProblem<'_>,
    params: &ControlParams,
    z: Vec<f64>,
    cost: f64,
    start_cost: f64,
    iterations: usize,
    diverged: bool,
) -> ControlSolution {
    let inputs = problem.inputs(&z);
    let states = problem.rollout(&z).unwrap_or_default();
    let mut violations = StateViolations::default();
    for (k, st) in states.iter().enumerate() {
        violations.speed += usize::from(st.u < params.speed_min || st.u > params.speed_max);
        violations.lateral += usize::from(st.y < params.y_min || st.y > params.y_max);
        let gap = problem.reference.leader_gap(k + 1, st.x, params.body_length);
        violations.gap_floor += usize::from(gap < params.gap_floor);
    }
    ControlSolution {
        accels: inputs.iter().map(|i| i.accel).collect(),
        steers: inputs.iter().map(|i| i.steer).collect(),
        blocks: z,
        states,
        cost,
        start_cost,
        iterations,
        diverged,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ManeuverPhase;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KEEP: ManeuverPhase = ManeuverPhase::LaneKeep { lane: 1 };

    fn small(horizon: usize, block_len: usize) -> ControlParams {
        ControlParams { horizon, block_len, max_iterations: 200, ..ControlParams::default() }
    }

    fn leader(x0: f64, speed: f64, decel: f64, n: usize, ts: f64) -> Vec<f64> {
        (1..=n)
            .map(|k| {
                let t = k as f64 * ts;
                let t_stop = if decel > 0.0 { speed / decel } else { f64::INFINITY };
                let t = t.min(t_stop);
                x0 + speed * t - 0.5 * decel * t * t
            })
            .collect()
    }

    #[test]
    fn rest_point_holds_still() {
        let params = ControlParams::default();
        let vehicle = BicycleParams::default();
        let r = ControlReference::free_road(-4.8, KEEP);
        let sol = solve_control(&BicycleState::cruising(0.0, -4.8, 27.0), &r, None, None, &params, &vehicle);
        let cmd = sol.first_command();
        assert!(cmd.accel.abs() <= 1e-3 && cmd.steer.abs() <= 1e-4, "{cmd:?}");
        assert!(!sol.diverged);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let params = small(10, 1);
        let vehicle = BicycleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let ego = BicycleState {
                x: 0.0,
                y: -4.8 + rng.random_range(-1.0..1.0),
                yaw: rng.random_range(-0.03..0.03),
                u: rng.random_range(18.0..31.0),
                v: rng.random_range(-0.2..0.2),
                omega: rng.random_range(-0.05..0.05),
            };
            let xs = leader(rng.random_range(12.0..40.0), rng.random_range(10.0..30.0), 0.0, 10, params.ts);
            let r = ControlReference { y_ref: -4.8, leader_x: Some(xs), phase: KEEP };
            let problem = ControlProblem::new(ego, &r, &params, &vehicle);
            let lo = problem.lower();
            let hi = problem.upper();
            let z: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
            let g = problem.gradient(&z).unwrap();
            let fd: Vec<f64> = (0..z.len())
                .map(|i| {
                    let h = 1e-6 * (hi[i] - lo[i]);
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i] += h;
                    zm[i] -= h;
                    (problem.cost(&zp) - problem.cost(&zm)) / (2.0 * h)
                })
                .collect();
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err / norm.max(1.0) < 1e-4, "relative error {}", err / norm);
        }
    }

    fn brute_force(problem: &ControlProblem<'_>, params: &ControlParams) -> f64 {
        let accel = [params.accel_min, 0.0, params.accel_max];
        let steer = [-params.steer_max(), 0.0, params.steer_max()];
        let t = params.horizon;
        let mut best = f64::INFINITY;
        for code in 0..9usize.pow(t as u32) {
            let mut z = vec![0.0; 2 * t];
            let mut c = code;
            for k in 0..t {
                z[k] = accel[c % 3];
                z[t + k] = steer[(c / 3) % 3];
                c /= 9;
            }
            best = best.min(problem.cost(&z));
        }
        best
    }

    #[test]
    fn beats_grid_search_on_short_horizons() {
        let params = small(3, 1);
        let vehicle = BicycleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let ego = BicycleState {
                x: 0.0,
                y: -4.8 + rng.random_range(-1.5..1.5),
                yaw: rng.random_range(-0.03..0.03),
                u: rng.random_range(15.0..32.0),
                v: rng.random_range(-0.3..0.3),
                omega: rng.random_range(-0.05..0.05),
            };
            let xs = leader(rng.random_range(6.0..30.0), rng.random_range(5.0..30.0), 0.0, 3, params.ts);
            let r = ControlReference { y_ref: -4.8, leader_x: Some(xs), phase: KEEP };
            let sol = solve_control(&ego, &r, None, None, &params, &vehicle);
            let problem = ControlProblem::new(ego, &r, &params, &vehicle);
            let brute = brute_force(&problem, &params);
            assert!(sol.cost <= brute + 1e-6, "solver {} brute {}", sol.cost, brute);
        }
    }

    #[test]
    fn steers_back_toward_reference() {
        let params = ControlParams::default();
        let vehicle = BicycleParams::default();
        let r = ControlReference::free_road(-4.8, KEEP);
        let mut ego = BicycleState::cruising(0.0, -4.3, 27.0);
        let mut warm: Option<ControlSolution> = None;
        let mut settled_at = None;
        for frame in 0..60 {
            let sol = solve_control(&ego, &r, warm.as_ref(), None, &params, &vehicle);
            let cmd = sol.first_command();
            if frame == 0 {
                assert!(cmd.steer < 0.0, "offset to the left must steer right, got {cmd:?}");
            }
            ego = step_bicycle(&ego, &cmd, &vehicle, params.ts).unwrap();
            if (ego.y + 4.8).abs() < 0.1 && settled_at.is_none() {
                settled_at = Some(frame);
            }
            warm = Some(sol);
        }
        assert!(settled_at.is_some_and(|f| f < 40), "settled at {settled_at:?}");
        assert!((ego.y + 4.8).abs() < 0.1);
    }

    #[test]
    fn brakes_for_a_stopping_leader() {
        let params = ControlParams::default();
        let vehicle = BicycleParams::default();
        let ts = params.ts;
        let mut ego = BicycleState::cruising(0.0, -4.8, 25.0);
        let (lead_x0, lead_v, lead_dec) = (40.0, 25.0, 3.0);
        let mut warm: Option<ControlSolution> = None;
        for frame in 0..400 {
            let t0 = frame as f64 * ts;
            let t_stop = lead_v / lead_dec;
            let pos = |t: f64| {
                let t = t.min(t_stop);
                lead_x0 + lead_v * t - 0.5 * lead_dec * t * t
            };
            let xs: Vec<f64> = (1..=params.horizon).map(|k| pos(t0 + k as f64 * ts)).collect();
            let r = ControlReference { y_ref: -4.8, leader_x: Some(xs), phase: KEEP };
            let sol = solve_control(&ego, &r, warm.as_ref(), None, &params, &vehicle);
            let cmd = sol.first_command();
            assert!(params.input_in_box(&cmd));
            if frame > 5 && t0 + 1.0 < t_stop {
                assert!(cmd.accel < 0.0, "frame {frame}: {cmd:?}");
            }
            if ego.u < 1.0 {
                break;
            }
            ego = step_bicycle(&ego, &cmd, &vehicle, ts).unwrap();
            let gap = pos(t0 + ts) - ego.x - params.body_length;
            assert!(gap >= 0.0, "frame {frame}: gap {gap}");
            warm = Some(sol);
        }
    }

    #[test]
    fn unreachable_speed_falls_back_to_braking() {
        let params = ControlParams::default();
        let vehicle = BicycleParams::default();
        let r = ControlReference::free_road(-4.8, KEEP);
        let sol = solve_control(&BicycleState::cruising(0.0, -4.8, 0.1), &r, None, None, &params, &vehicle);
        assert!(sol.diverged);
        assert_eq!(sol.first_command(), ControlInput::new(params.accel_min, 0.0));
    }

    #[test]
    fn shift_reblocks_the_sequence() {
        let params = ControlParams { horizon: 4, block_len: 2, ..ControlParams::default() };
        let sol = ControlSolution {
            accels: vec![1.0, 1.0, 2.0, 2.0],
            steers: vec![0.0; 4],
            blocks: vec![1.0, 2.0, 0.0, 0.0],
            states: vec![],
            cost: 0.0,
            start_cost: 0.0,
            iterations: 0,
            diverged: false,
            violations: StateViolations::default(),
        };
        assert_eq!(sol.shifted(&params), vec![1.5, 2.0, 0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn commands_stay_in_box_and_cost_never_rises(
            y in -6.0f64..-3.6, yaw in -0.035f64..0.035, u in 15.0f64..32.0,
            gap in 3.0f64..60.0, lead in 0.0f64..30.0,
        ) {
            let params = ControlParams::default();
            let vehicle = BicycleParams::default();
            let ego = BicycleState { yaw, ..BicycleState::cruising(0.0, y, u) };
            let xs = leader(gap + params.body_length, lead, 0.0, params.horizon, params.ts);
            let r = ControlReference { y_ref: -4.8, leader_x: Some(xs), phase: KEEP };
            let sol = solve_control(&ego, &r, None, None, &params, &vehicle);
            prop_assert!(sol.cost <= sol.start_cost);
            for (a, d) in sol.accels.iter().zip(&sol.steers) {
                prop_assert!(params.input_in_box(&ControlInput::new(*a, *d)));
            }
        }
    }
}

