//! Out-of-process prediction. Run with `--serve` this binary is a predictor
//! server: it reads requests on stdin and answers with a constant-acceleration
//! fit to the target's recent track. Without arguments it launches itself as
//! the server and compares frozen-time against it on the same seeds.
//!
//! ```text
//! cargo run --release --example external_predictor
//! ```

use std::io::{BufRead, Write};

use lanechange::config::ScenarioConfig;
use lanechange::prediction::{PredictRequest, PredictResponse, PREDICTION_HORIZON};
use lanechange::run::{run, RunManifest};

/// Frame period the server assumes; the protocol carries frame numbers only.
const TS: f64 = 0.1;

fn extrapolate(req: &PredictRequest) -> Result<Vec<[f64; 2]>, String> {
    let mut track: Vec<(u64, f64, f64)> =
        req.history.iter().filter(|r| r.1 == req.target).map(|r| (r.0, r.2, r.3)).collect();
    track.sort_by_key(|r| r.0);
    let n = track.len();
    if n < 3 {
        return Err(format!("only {n} samples for vehicle {}", req.target));
    }
    // finite differences over the last second
    let span = (n - 1).min(10) / 2;
    let (f0, x0, _) = track[n - 1 - 2 * span];
    let (f1, x1, _) = track[n - 1 - span];
    let (f2, x2, y2) = track[n - 1];
    let h1 = (f1 - f0) as f64 * TS;
    let h2 = (f2 - f1) as f64 * TS;
    let v1 = (x1 - x0) / h1;
    let v2 = (x2 - x1) / h2;
    let accel = (v2 - v1) / (0.5 * (h1 + h2));
    let speed = v2 + 0.5 * h2 * accel;
    let mut points = Vec::with_capacity(PREDICTION_HORIZON);
    let (mut x, mut v) = (x2, speed.max(0.0));
    for _ in 0..PREDICTION_HORIZON {
        let next = (v + accel * TS).max(0.0);
        x += 0.5 * (v + next) * TS;
        v = next;
        points.push([x, y2]);
    }
    Ok(points)
}

fn serve() -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let reply = match serde_json::from_str::<PredictRequest>(&line) {
            Ok(req) => match extrapolate(&req) {
                Ok(points) => PredictResponse { id: req.id, trajectory: Some(points), error: None },
                Err(e) => PredictResponse { id: req.id, trajectory: None, error: Some(e) },
            },
            Err(e) => PredictResponse { id: 0, trajectory: None, error: Some(e.to_string()) },
        };
        serde_json::to_writer(&mut stdout, &reply)?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::args().nth(1).as_deref() == Some("--serve") {
        return Ok(serve()?);
    }
    let exe = std::env::current_exe()?;
    let dir = std::env::temp_dir().join("lanechange-external-predictor");
    std::fs::create_dir_all(&dir)?;
    let config = ScenarioConfig { name: "external_demo".into(), duration_s: 60.0, ..Default::default() };
    let path = dir.join("scenario.json");
    std::fs::write(&path, config.to_json())?;

    let manifest = RunManifest {
        predictor_cmd: Some(format!("{} --serve", shlex::try_quote(&exe.to_string_lossy())?)),
        seeds: 3,
        seed_base: Some(7),
        compare: true,
        ..RunManifest::new(&path, &dir)
    };
    let report = run(&manifest)?;
    println!("seed   frozen  external   delta   5 s error frozen / external");
    for c in &report.comparison {
        println!(
            "{:4} {:8.2} {:9.2} {:+7.3}   {:.2} / {:.2} m",
            c.seed,
            c.frozen_mean_speed,
            c.external_mean_speed,
            c.mean_speed_delta,
            c.frozen_prediction_error.unwrap_or(f64::NAN),
            c.external_prediction_error.unwrap_or(f64::NAN)
        );
    }
    let fallbacks: usize = report.runs.iter().map(|r| r.predictor_fallbacks).sum();
    println!("\n{fallbacks} predictions fell back to frozen-time; tables in {}", dir.display());
    Ok(())
}
