//! Vehicle models used by the decision and control layers.
//!
//! Two models live here: the discrete point-mass model that the lane-cost
//! optimiser rolls forward, and the planar dynamic bicycle model with linear
//! tires that both the trajectory controller and the simulated ego plant use.
//! The bicycle model is written in small-steering-angle form, so the
//! `F_Y1 * sin(delta)` term of the longitudinal row is absent and
//! `cos(delta)` is taken as one.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Time derivative / state vector layout `[x, y, yaw, u, v, omega]`.
pub type StateVec = SVector<f64, 6>;
/// Jacobian of the vector field with respect to the state.
pub type StateJacobian = SMatrix<f64, 6, 6>;
/// Jacobian of the vector field with respect to `[a, delta]`.
pub type InputJacobian = SMatrix<f64, 6, 2>;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DynamicsError {
    /// Slip angles divide by the body-frame longitudinal speed.
    #[error("longitudinal speed {0} m/s is not positive; slip angles are undefined")]
    DegenerateSpeed(f64),
}

/// Longitudinal state of the point-mass model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointMassState {
    /// Position along the road (m).
    pub s: f64,
    /// Speed (m/s).
    pub v: f64,
    /// Acceleration (m/s^2).
    pub a: f64,
    /// Jerk (m/s^3).
    pub j: f64,
}

impl PointMassState {
    pub fn new(s: f64, v: f64, a: f64, j: f64) -> Self {
        Self { s, v, a, j }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s, self.v, self.a, self.j]
    }
}

/// One step of the point-mass model. The commanded acceleration becomes the
/// next state's acceleration and the jerk is the finite difference of the two.
pub fn step_point_mass(state: PointMassState, accel_cmd: f64, ts: f64) -> PointMassState {
    debug_assert!(ts > 0.0);
    // same operation order as the matrix product, so the two agree bitwise
    let inv = 1.0 / ts;
    PointMassState {
        s: state.s + ts * state.v,
        v: state.v + ts * state.a,
        a: accel_cmd,
        j: inv * accel_cmd - inv * state.a,
    }
}

/// Physical constants of the bicycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BicycleParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Front axle cornering stiffness (N/rad, negative).
    pub k_front: f64,
    /// Rear axle cornering stiffness (N/rad, negative).
    pub k_rear: f64,
    /// Centre of mass to front axle (m).
    pub l_front: f64,
    /// Centre of mass to rear axle (m).
    pub l_rear: f64,
    /// Yaw inertia (kg m^2).
    pub yaw_inertia: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            mass: 1470.0,
            k_front: -100_000.0,
            k_rear: -100_000.0,
            l_front: 1.085,
            l_rear: 2.503,
            yaw_inertia: 2400.0,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err(format!("mass must be positive, got {}", self.mass));
        }
        if !(self.yaw_inertia > 0.0) {
            return Err(format!("yaw_inertia must be positive, got {}", self.yaw_inertia));
        }
        if !(self.l_front > 0.0 && self.l_rear > 0.0) {
            return Err("axle distances must be positive".into());
        }
        if !(self.k_front < 0.0 && self.k_rear < 0.0) {
            return Err("cornering stiffnesses must be negative".into());
        }
        Ok(())
    }
}

/// Planar state of the bicycle model. `u` is the body-frame longitudinal
/// speed and `v` the body-frame lateral speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub u: f64,
    pub v: f64,
    pub omega: f64,
}

impl BicycleState {
    /// Straight-line cruise at `speed` on the given lateral position.
    pub fn cruising(x: f64, y: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            yaw: 0.0,
            u: speed,
            v: 0.0,
            omega: 0.0,
        }
    }

    pub fn to_vector(&self) -> StateVec {
        StateVec::new(self.x, self.y, self.yaw, self.u, self.v, self.omega)
    }

    pub fn from_vector(x: &StateVec) -> Self {
        Self {
            x: x[0],
            y: x[1],
            yaw: x[2],
            u: x[3],
            v: x[4],
            omega: x[5],
        }
    }

    /// Global-frame longitudinal velocity.
    pub fn x_dot(&self) -> f64 {
        self.u * self.yaw.cos() - self.v * self.yaw.sin()
    }

    /// Global-frame lateral velocity.
    pub fn y_dot(&self) -> f64 {
        self.v * self.yaw.cos() + self.u * self.yaw.sin()
    }
}

/// Commanded acceleration and front-wheel steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// m/s^2
    pub accel: f64,
    /// rad
    pub steer: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }
}

/// Lateral tire forces `(front, rear)` of the linear tire model.
pub fn tire_forces(
    state: &BicycleState,
    steer: f64,
    params: &BicycleParams,
) -> Result<(f64, f64), DynamicsError> {
    if !(state.u > 0.0) {
        return Err(DynamicsError::DegenerateSpeed(state.u));
    }
    let alpha_front = (state.v + params.l_front * state.omega) / state.u - steer;
    let alpha_rear = (state.v - params.l_rear * state.omega) / state.u;
    Ok((params.k_front * alpha_front, params.k_rear * alpha_rear))
}

fn vector_field(x: &StateVec, input: &ControlInput, p: &BicycleParams) -> Result<StateVec, DynamicsError> {
    let state = BicycleState::from_vector(x);
    let (f1, f2) = tire_forces(&state, input.steer, p)?;
    let (sin_yaw, cos_yaw) = state.yaw.sin_cos();
    Ok(StateVec::new(
        state.u * cos_yaw - state.v * sin_yaw,
        state.v * cos_yaw + state.u * sin_yaw,
        state.omega,
        input.accel + state.v * state.omega,
        -state.u * state.omega + (f1 + f2) / p.mass,
        (p.l_front * f1 - p.l_rear * f2) / p.yaw_inertia,
    ))
}

/// Time derivative of the bicycle state under a constant input.
pub fn bicycle_derivative(
    state: &BicycleState,
    input: &ControlInput,
    params: &BicycleParams,
) -> Result<BicycleState, DynamicsError> {
    vector_field(&state.to_vector(), input, params).map(|d| BicycleState::from_vector(&d))
}

/// Analytic Jacobians of the vector field, `(df/dx, df/du)`.
pub fn bicycle_jacobians(
    state: &BicycleState,
    _input: &ControlInput,
    p: &BicycleParams,
) -> Result<(StateJacobian, InputJacobian), DynamicsError> {
    let BicycleState { yaw, u, v, omega, .. } = *state;
    if !(u > 0.0) {
        return Err(DynamicsError::DegenerateSpeed(u));
    }
    let (sin_yaw, cos_yaw) = yaw.sin_cos();
    let (kf, kr, lf, lr) = (p.k_front, p.k_rear, p.l_front, p.l_rear);

    let df1_du = -kf * (v + lf * omega) / (u * u);
    let df1_dv = kf / u;
    let df1_dw = kf * lf / u;
    let df1_dsteer = -kf;
    let df2_du = -kr * (v - lr * omega) / (u * u);
    let df2_dv = kr / u;
    let df2_dw = -kr * lr / u;

    let mut jx = StateJacobian::zeros();
    jx[(0, 2)] = -u * sin_yaw - v * cos_yaw;
    jx[(0, 3)] = cos_yaw;
    jx[(0, 4)] = -sin_yaw;
    jx[(1, 2)] = -v * sin_yaw + u * cos_yaw;
    jx[(1, 3)] = sin_yaw;
    jx[(1, 4)] = cos_yaw;
    jx[(2, 5)] = 1.0;
    jx[(3, 4)] = omega;
    jx[(3, 5)] = v;
    jx[(4, 3)] = -omega + (df1_du + df2_du) / p.mass;
    jx[(4, 4)] = (df1_dv + df2_dv) / p.mass;
    jx[(4, 5)] = -u + (df1_dw + df2_dw) / p.mass;
    jx[(5, 3)] = (lf * df1_du - lr * df2_du) / p.yaw_inertia;
    jx[(5, 4)] = (lf * df1_dv - lr * df2_dv) / p.yaw_inertia;
    jx[(5, 5)] = (lf * df1_dw - lr * df2_dw) / p.yaw_inertia;

    let mut ju = InputJacobian::zeros();
    ju[(3, 0)] = 1.0;
    ju[(4, 1)] = df1_dsteer / p.mass;
    ju[(5, 1)] = lf * df1_dsteer / p.yaw_inertia;
    Ok((jx, ju))
}

/// Classic fourth-order Runge-Kutta step with the input held over `ts`.
pub fn integrate_bicycle(
    state: &BicycleState,
    input: &ControlInput,
    params: &BicycleParams,
    ts: f64,
) -> Result<BicycleState, DynamicsError> {
    let x = state.to_vector();
    let k1 = vector_field(&x, input, params)?;
    let k2 = vector_field(&(x + k1 * (0.5 * ts)), input, params)?;
    let k3 = vector_field(&(x + k2 * (0.5 * ts)), input, params)?;
    let k4 = vector_field(&(x + k3 * ts), input, params)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0);
    Ok(BicycleState::from_vector(&next))
}

/// RK4 step together with its sensitivities `(d next / d state, d next / d input)`.
pub fn integrate_bicycle_with_sensitivity(
    state: &BicycleState,
    input: &ControlInput,
    params: &BicycleParams,
    ts: f64,
) -> Result<(BicycleState, StateJacobian, InputJacobian), DynamicsError> {
    let h = ts;
    let x1 = state.to_vector();
    let k1 = vector_field(&x1, input, params)?;
    let (a1, b1) = bicycle_jacobians(&BicycleState::from_vector(&x1), input, params)?;
    let x2 = x1 + k1 * (0.5 * h);
    let k2 = vector_field(&x2, input, params)?;
    let (a2, b2) = bicycle_jacobians(&BicycleState::from_vector(&x2), input, params)?;
    let x3 = x1 + k2 * (0.5 * h);
    let k3 = vector_field(&x3, input, params)?;
    let (a3, b3) = bicycle_jacobians(&BicycleState::from_vector(&x3), input, params)?;
    let x4 = x1 + k3 * h;
    let k4 = vector_field(&x4, input, params)?;
    let (a4, b4) = bicycle_jacobians(&BicycleState::from_vector(&x4), input, params)?;

    let eye = StateJacobian::identity();
    let dk1_dx = a1;
    let dk2_dx = a2 * (eye + dk1_dx * (0.5 * h));
    let dk3_dx = a3 * (eye + dk2_dx * (0.5 * h));
    let dk4_dx = a4 * (eye + dk3_dx * h);
    let dk1_du = b1;
    let dk2_du = a2 * dk1_du * (0.5 * h) + b2;
    let dk3_du = a3 * dk2_du * (0.5 * h) + b3;
    let dk4_du = a4 * dk3_du * h + b4;

    let next = x1 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let phi = eye + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * (h / 6.0);
    let gamma = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * (h / 6.0);
    Ok((BicycleState::from_vector(&next), phi, gamma))
}

/// RK4 substeps that keep `h * lambda` inside the stability region for the
/// stiffest lateral mode at speed `u`. Both modes stiffen as `1/u`, so a
/// single 0.1 s step is only stable above roughly 11 m/s.
pub fn stable_substeps(u: f64, params: &BicycleParams, ts: f64) -> usize {
    const RK4_REACH: f64 = 2.0;
    let lateral = (params.k_front.abs() + params.k_rear.abs()) / params.mass;
    let yaw = (params.k_front.abs() * params.l_front.powi(2) + params.k_rear.abs() * params.l_rear.powi(2))
        / params.yaw_inertia;
    let stiffness = lateral.max(yaw) / u.max(1e-3);
    ((ts * stiffness / RK4_REACH).ceil() as usize).clamp(1, 256)
}

/// One frame of plant motion: [`integrate_bicycle`] repeated over
/// [`stable_substeps`] equal substeps.
pub fn step_bicycle(
    state: &BicycleState,
    input: &ControlInput,
    params: &BicycleParams,
    ts: f64,
) -> Result<BicycleState, DynamicsError> {
    let n = stable_substeps(state.u, params, ts);
    let h = ts / n as f64;
    let mut x = *state;
    for _ in 0..n {
        x = integrate_bicycle(&x, input, params, h)?;
    }
    Ok(x)
}

/// [`step_bicycle`] with its chained sensitivities.
pub fn step_bicycle_with_sensitivity(
    state: &BicycleState,
    input: &ControlInput,
    params: &BicycleParams,
    ts: f64,
) -> Result<(BicycleState, StateJacobian, InputJacobian), DynamicsError> {
    let n = stable_substeps(state.u, params, ts);
    if n == 1 {
        return integrate_bicycle_with_sensitivity(state, input, params, ts);
    }
    let h = ts / n as f64;
    let mut x = *state;
    let mut phi = StateJacobian::identity();
    let mut gamma = InputJacobian::zeros();
    for _ in 0..n {
        let (next, p, g) = integrate_bicycle_with_sensitivity(&x, input, params, h)?;
        phi = p * phi;
        gamma = p * gamma + g;
        x = next;
    }
    Ok((x, phi, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector4};
    use proptest::prelude::*;

    fn table() -> BicycleParams {
        BicycleParams::default()
    }

    #[test]
    fn point_mass_examples() {
        let s = step_point_mass(PointMassState::new(0.0, 20.0, 0.0, 0.0), 1.0, 0.1);
        assert_eq!(s.as_array(), [2.0, 20.0, 1.0, 10.0]);
        let s = step_point_mass(PointMassState::new(100.0, 27.0, 0.0, 0.0), 0.0, 0.1);
        assert_relative_eq!(s.s, 102.7, epsilon = 1e-12);
        assert_eq!((s.v, s.a, s.j), (27.0, 0.0, 0.0));
        let s = step_point_mass(PointMassState::new(3.0, 21.0, -1.3, 4.0), -1.3, 0.1);
        assert_eq!(s.j, 0.0);
    }

    proptest! {
        #[test]
        fn point_mass_matches_matrix_form(
            s in -1e3..1e3f64, v in 0.0..40.0f64, a in -5.0..3.0f64, j in -50.0..50.0f64,
            u in -4.5..2.6f64, ts in 0.01..0.5f64,
        ) {
            let a_mat = Matrix4::new(
                1.0, ts, 0.0, 0.0,
                0.0, 1.0, ts, 0.0,
                0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, -1.0 / ts, 0.0,
            );
            let b_vec = Vector4::new(0.0, 0.0, 1.0, 1.0 / ts);
            let x = Vector4::new(s, v, a, j);
            let expected = a_mat * x + b_vec * u;
            let got = step_point_mass(PointMassState::new(s, v, a, j), u, ts);
            prop_assert!((got.s - expected[0]).abs() <= 1e-12 * (1.0 + s.abs()));
            prop_assert!((got.v - expected[1]).abs() <= 1e-12 * (1.0 + v.abs()));
            prop_assert_eq!(got.a, expected[2]);
            prop_assert!((got.j - expected[3]).abs() <= 1e-12 * (1.0 + expected[3].abs()));
        }
    }

    #[test]
    fn tire_force_examples() {
        let st = BicycleState::cruising(0.0, 0.0, 25.0);
        assert_eq!(tire_forces(&st, 0.0, &table()).unwrap(), (0.0, 0.0));
        let (f1, f2) = tire_forces(&st, 0.01, &table()).unwrap();
        assert_relative_eq!(f1, 1000.0, epsilon = 1e-9);
        assert_eq!(f2, 0.0);
        let st = BicycleState { v: 0.5, omega: 0.1, ..st };
        let (f1, _) = tire_forces(&st, 0.0, &table()).unwrap();
        assert_relative_eq!(f1, -2434.0, epsilon = 1e-9);
    }

    #[test]
    fn tire_forces_reject_non_positive_speed() {
        let st = BicycleState::cruising(0.0, 0.0, 0.0);
        assert_eq!(
            tire_forces(&st, 0.0, &table()),
            Err(DynamicsError::DegenerateSpeed(0.0))
        );
        assert!(integrate_bicycle(&st, &ControlInput::default(), &table(), 0.1).is_err());
    }

    #[test]
    fn derivative_examples() {
        let st = BicycleState::cruising(0.0, 0.0, 25.0);
        let p = table();
        let d = bicycle_derivative(&st, &ControlInput::new(0.0, 0.0), &p).unwrap();
        assert_eq!(d, BicycleState { x: 25.0, ..Default::default() });
        let d = bicycle_derivative(&st, &ControlInput::new(1.0, 0.0), &p).unwrap();
        assert_eq!(d, BicycleState { x: 25.0, u: 1.0, ..Default::default() });
        let d = bicycle_derivative(&st, &ControlInput::new(0.0, 0.01), &p).unwrap();
        assert_relative_eq!(d.v, 1000.0 / 1470.0, epsilon = 1e-12);
        assert_relative_eq!(d.omega, 1.085 * 1000.0 / 2400.0, epsilon = 1e-12);
        assert!((d.v - 0.680).abs() < 5e-4 && (d.omega - 0.452).abs() < 5e-4);
    }

    #[test]
    fn straight_cruise_integration_is_exact() {
        let p = table();
        let st = BicycleState::cruising(10.0, -4.8, 25.0);
        let zero = ControlInput::default();
        let one = integrate_bicycle(&st, &zero, &p, 0.1).unwrap();
        assert_relative_eq!(one.x, 12.5, epsilon = 1e-12);
        assert_eq!((one.y, one.yaw, one.v, one.omega), (-4.8, 0.0, 0.0, 0.0));
        let half = integrate_bicycle(&st, &zero, &p, 0.05).unwrap();
        let two = integrate_bicycle(&half, &zero, &p, 0.05).unwrap();
        assert_relative_eq!(two.x, one.x, max_relative = 1e-9);
        assert_relative_eq!(two.u, one.u, max_relative = 1e-9);
    }

    #[test]
    fn steering_left_turns_toward_positive_y() {
        let p = table();
        let input = ControlInput::new(0.0, 0.01);
        let mut rk = BicycleState::cruising(0.0, 0.0, 25.0);
        for _ in 0..10 {
            rk = integrate_bicycle(&rk, &input, &p, 0.1).unwrap();
        }
        // forward Euler reference at a fine step
        let mut eu = BicycleState::cruising(0.0, 0.0, 25.0).to_vector();
        for _ in 0..10_000 {
            let d = bicycle_derivative(&BicycleState::from_vector(&eu), &input, &p).unwrap();
            eu += d.to_vector() * 1e-4;
        }
        let eu = BicycleState::from_vector(&eu);
        assert!(rk.y > 0.0 && rk.yaw > 0.0);
        assert!(eu.y > 0.0 && eu.yaw > 0.0);
        assert!((rk.y - eu.y).abs() < 0.01 * eu.y.abs());
    }

    fn reference_step(st: &BicycleState, input: &ControlInput, span: f64) -> BicycleState {
        let n = (span / 1e-5).round() as usize;
        let h = span / n as f64;
        let mut s = *st;
        for _ in 0..n {
            s = integrate_bicycle(&s, input, &table(), h).unwrap();
        }
        s
    }

    fn dist(a: &BicycleState, b: &BicycleState) -> f64 {
        (a.to_vector() - b.to_vector()).norm()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let st = BicycleState { x: 0.0, y: -4.8, yaw: 0.01, u: 24.0, v: 0.2, omega: 0.05 };
        let input = ControlInput::new(0.8, 0.03);
        let span = 0.2;
        let reference = reference_step(&st, &input, span);
        let coarse = integrate_bicycle(&st, &input, &table(), span).unwrap();
        let half = integrate_bicycle(&st, &input, &table(), span / 2.0).unwrap();
        let fine = integrate_bicycle(&half, &input, &table(), span / 2.0).unwrap();
        let ratio = dist(&coarse, &reference) / dist(&fine, &reference);
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn tire_forces_superpose(
            u in 5.0..35.0f64,
            v1 in -1.0..1.0f64, w1 in -0.5..0.5f64, d1 in -0.1..0.1f64,
            v2 in -1.0..1.0f64, w2 in -0.5..0.5f64, d2 in -0.1..0.1f64,
        ) {
            let p = table();
            let mk = |v, omega| BicycleState { u, v, omega, ..Default::default() };
            let (a1, a2) = tire_forces(&mk(v1, w1), d1, &p).unwrap();
            let (b1, b2) = tire_forces(&mk(v2, w2), d2, &p).unwrap();
            let (c1, c2) = tire_forces(&mk(v1 + v2, w1 + w2), d1 + d2, &p).unwrap();
            let scale = 1e-9 * (a1.abs() + b1.abs() + a2.abs() + b2.abs() + 1.0);
            prop_assert!((c1 - a1 - b1).abs() <= scale);
            prop_assert!((c2 - a2 - b2).abs() <= scale);
        }

        #[test]
        fn straight_line_keeps_lateral_state(
            x in -100.0..100.0f64, y in -9.0..0.0f64, u in 5.0..35.0f64, a in -4.5..2.6f64,
        ) {
            let st = BicycleState::cruising(x, y, u);
            let d = bicycle_derivative(&st, &ControlInput::new(a, 0.0), &table()).unwrap();
            prop_assert_eq!((d.y, d.yaw, d.v, d.omega), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn analytic_sensitivity_matches_finite_difference() {
        let p = table();
        let st = BicycleState { x: 3.0, y: -4.0, yaw: 0.02, u: 23.0, v: 0.3, omega: -0.04 };
        let input = ControlInput::new(0.5, -0.02);
        let (_, phi, gamma) = integrate_bicycle_with_sensitivity(&st, &input, &p, 0.1).unwrap();
        let base = st.to_vector();
        for i in 0..6 {
            let h = 1e-6;
            let mut plus = base;
            plus[i] += h;
            let mut minus = base;
            minus[i] -= h;
            let fp = integrate_bicycle(&BicycleState::from_vector(&plus), &input, &p, 0.1).unwrap();
            let fm = integrate_bicycle(&BicycleState::from_vector(&minus), &input, &p, 0.1).unwrap();
            let col = (fp.to_vector() - fm.to_vector()) / (2.0 * h);
            assert!((col - phi.column(i)).norm() < 1e-6 * (1.0 + col.norm()), "state column {i}");
        }
        for (i, h) in [(0usize, 1e-5), (1, 1e-7)] {
            let mut ip = input;
            let mut im = input;
            if i == 0 {
                ip.accel += h;
                im.accel -= h;
            } else {
                ip.steer += h;
                im.steer -= h;
            }
            let fp = integrate_bicycle(&st, &ip, &p, 0.1).unwrap();
            let fm = integrate_bicycle(&st, &im, &p, 0.1).unwrap();
            let col = (fp.to_vector() - fm.to_vector()) / (2.0 * h);
            assert!((col - gamma.column(i)).norm() < 1e-5 * (1.0 + col.norm()), "input column {i}");
        }
    }

    #[test]
    fn substeps_tame_low_speed_steering() {
        let p = table();
        assert_eq!(stable_substeps(27.0, &p, 0.1), 1);
        assert!(stable_substeps(2.0, &p, 0.1) > 5);
        let input = ControlInput::new(0.0, 0.02);
        let mut x = BicycleState::cruising(0.0, 0.0, 3.0);
        for _ in 0..50 {
            x = step_bicycle(&x, &input, &p, 0.1).unwrap();
        }
        assert!(x.omega.abs() < 1.0 && x.v.abs() < 1.0, "{x:?}");
    }

    #[test]
    fn chained_sensitivity_matches_finite_difference() {
        let p = table();
        let st = BicycleState { x: 0.0, y: -4.0, yaw: 0.01, u: 4.0, v: 0.05, omega: 0.02 };
        let input = ControlInput::new(-1.0, 0.01);
        let (_, phi, gamma) = step_bicycle_with_sensitivity(&st, &input, &p, 0.1).unwrap();
        let h = 1e-6;
        for j in 0..6 {
            let mut a = st.to_vector();
            let mut b = st.to_vector();
            a[j] += h;
            b[j] -= h;
            let fa = step_bicycle(&BicycleState::from_vector(&a), &input, &p, 0.1).unwrap().to_vector();
            let fb = step_bicycle(&BicycleState::from_vector(&b), &input, &p, 0.1).unwrap().to_vector();
            let col = (fa - fb) / (2.0 * h);
            assert!((col - phi.column(j)).norm() < 1e-5 * (1.0 + col.norm()), "column {j}");
        }
        let da = ControlInput::new(input.accel + h, input.steer);
        let db = ControlInput::new(input.accel - h, input.steer);
        let fa = step_bicycle(&st, &da, &p, 0.1).unwrap().to_vector();
        let fb = step_bicycle(&st, &db, &p, 0.1).unwrap().to_vector();
        assert!(((fa - fb) / (2.0 * h) - gamma.column(0)).norm() < 1e-6);
    }
}
