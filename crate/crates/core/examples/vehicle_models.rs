//! The two vehicle models side by side: the jerk-state point mass used for
//! lane scoring and the dynamic bicycle the controller steers.
//!
//! ```text
//! cargo run --release --example vehicle_models
//! ```

use lanechange::dynamics::{
    integrate_bicycle, step_bicycle, step_point_mass, tire_forces, BicycleParams, BicycleState, ControlInput,
    PointMassState,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ts = 0.1;

    println!("point mass, 2 m/s^2 command from 20 m/s:");
    let mut pm = PointMassState::new(0.0, 20.0, 0.0, 0.0);
    for k in 1..=10 {
        pm = step_point_mass(pm, 2.0, ts);
        if k % 2 == 0 {
            println!("  t={:.1}  s={:7.3}  v={:6.3}  a={:5.2}  j={:6.2}", k as f64 * ts, pm.s, pm.v, pm.a, pm.j);
        }
    }

    let params = BicycleParams::default();
    println!("\nbicycle at 27 m/s, 2 deg steer for 0.5 s then straight:");
    let mut x = BicycleState::cruising(0.0, -4.8, 27.0);
    for k in 1..=30 {
        let steer = if k <= 5 { 2f64.to_radians() } else { 0.0 };
        x = step_bicycle(&x, &ControlInput::new(0.0, steer), &params, ts)?;
        if k % 5 == 0 {
            let (ff, fr) = tire_forces(&x, steer, &params)?;
            println!(
                "  t={:.1}  y={:6.3}  yaw={:6.2} deg  v={:6.3}  omega={:6.3}  Ff={:7.0} N  Fr={:7.0} N",
                k as f64 * ts,
                x.y,
                x.yaw.to_degrees(),
                x.v,
                x.omega,
                ff,
                fr
            );
        }
    }

    // halving the step should shrink the error by about 2^4
    println!("\nRK4 self-convergence over 1 s with 3 deg steer:");
    let input = ControlInput::new(0.5, 3f64.to_radians());
    let run = |steps: usize| -> Result<BicycleState, _> {
        let mut s = BicycleState::cruising(0.0, 0.0, 25.0);
        for _ in 0..steps {
            s = integrate_bicycle(&s, &input, &params, 1.0 / steps as f64)?;
        }
        Ok::<_, lanechange::dynamics::DynamicsError>(s)
    };
    let reference = run(2560)?;
    let mut previous: Option<f64> = None;
    for steps in [20, 40, 80, 160] {
        let s = run(steps)?;
        let err = ((s.x - reference.x).powi(2) + (s.y - reference.y).powi(2)).sqrt();
        match previous {
            Some(p) => println!("  h=1/{steps:<4} position error {err:.3e}  ratio {:.1}", p / err),
            None => println!("  h=1/{steps:<4} position error {err:.3e}"),
        }
        previous = Some(err);
    }
    Ok(())
}
