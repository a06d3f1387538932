//! How far off the frozen-time (constant-velocity) predictor is, first for
//! a braking leader where the error has a closed form, then over a minute
//! of random highway traffic.
//!
//! ```text
//! cargo run --release --example frozen_vs_truth
//! ```

use lanechange::prediction::{predict_frozen, prediction_error, LeaderPredictor, VehicleId, PREDICTION_HORIZON};
use lanechange::{run_scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ts = 0.1;
    let decel = 1.5;
    let predicted = predict_frozen(VehicleId(1), 0.0, -4.8, 25.0, PREDICTION_HORIZON, ts);
    let truth: Vec<(f64, f64)> = (1..=PREDICTION_HORIZON)
        .map(|k| {
            let t = k as f64 * ts;
            (25.0 * t - 0.5 * decel * t * t, -4.8)
        })
        .collect();
    let e = prediction_error(&predicted, &truth)?;
    println!("leader braking at {decel} m/s^2 from 25 m/s:");
    for k in [10, 20, 30, 40, 50] {
        let t = k as f64 * ts;
        println!("  {t:.0} s ahead: error {:6.3} m  (0.5 a t^2 = {:6.3} m)", e.per_horizon[k - 1], 0.5 * decel * t * t);
    }
    println!("  average over the horizon {:.3} m", e.average);

    let config = ScenarioConfig { duration_s: 60.0, seed: 3, ..Default::default() };
    let out = run_scenario(&config, &mut LeaderPredictor::frozen())?;
    let errors: Vec<f64> = out.trace.iter().filter_map(|r| r.prediction_error).collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let pct = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    println!("\n5 s leader error in 60 s of traffic at density {}:", config.traffic.density);
    println!(
        "  {} samples, mean {:.2} m, median {:.2} m, 90th percentile {:.2} m, max {:.2} m",
        errors.len(),
        out.summary.mean_prediction_error.unwrap_or(f64::NAN),
        pct(0.5),
        pct(0.9),
        pct(1.0)
    );
    Ok(())
}
