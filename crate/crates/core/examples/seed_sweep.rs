//! A paired sweep over the congested scenario: the same five seeds with and
//! without lane changes, through the same batch runner the CLI uses.
//!
//! ```text
//! cargo run --release --example seed_sweep
//! ```

use lanechange::config::ScenarioConfig;
use lanechange::run::{run, RunManifest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base: ScenarioConfig = lanechange::config::parse_config(
        include_str!("../configs/congested.json"),
        "congested.json",
        true,
    )?;
    let root = std::env::temp_dir().join("lanechange-seed-sweep");
    let mut speeds = Vec::new();
    for lane_changes in [true, false] {
        let label = if lane_changes { "lane_change" } else { "acc" };
        let dir = root.join(label);
        std::fs::create_dir_all(&dir)?;
        let config = ScenarioConfig { name: format!("congested_{label}"), lane_changes, ..base.clone() };
        let path = dir.join("scenario.json");
        std::fs::write(&path, config.to_json())?;

        let manifest = RunManifest { seeds: 5, seed_base: Some(100), ..RunManifest::new(&path, &dir) };
        let report = run(&manifest)?;
        for r in &report.runs {
            println!(
                "{label:>11} seed {}: {:5.2} m/s, {} lane changes, min gap {:5.2} m",
                r.seed,
                r.mean_speed,
                r.lane_changes,
                r.min_gap.unwrap_or(f64::INFINITY)
            );
        }
        speeds.push(report.runs.iter().map(|r| r.mean_speed).collect::<Vec<_>>());
    }
    println!("\nseed  lane change   acc    gain");
    for (i, (lc, acc)) in speeds[0].iter().zip(&speeds[1]).enumerate() {
        println!("{:4}  {lc:11.2} {acc:6.2} {:+7.2}", 100 + i, lc - acc);
    }
    println!("\ntables written under {}", root.display());
    Ok(())
}
