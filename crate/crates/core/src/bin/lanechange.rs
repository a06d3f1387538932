use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lanechange::prediction::PredictorKind;
use lanechange::run::{run, RunManifest};

/// Closed-loop highway lane-change simulator.
///
/// Exit status: 0 success, 1 I/O or internal failure, 2 config error,
/// 3 predictor failure, 4 a run ended in a collision.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Scenario config (JSON). `{}` runs the defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of replications.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// First seed; defaults to the config's seed.
    #[arg(long)]
    seed_base: Option<u64>,
    /// Leader predictor; defaults to the config's.
    #[arg(long)]
    predictor: Option<PredictorKind>,
    /// Command line of the external predictor process.
    #[arg(long)]
    predictor_cmd: Option<String>,
    /// Run each seed with both predictors and write comparison.csv.
    #[arg(long)]
    compare: bool,
    /// Reject unknown config keys.
    #[arg(long)]
    strict: bool,
    /// Use frozen-time prediction if the predictor process fails to start.
    #[arg(long)]
    fallback_frozen: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANECHANGE_LOG", "info")).init();
    let args = Args::parse();
    let manifest = RunManifest {
        config: args.config,
        out: args.out,
        predictor: args.predictor,
        predictor_cmd: args.predictor_cmd,
        seeds: args.seeds,
        seed_base: args.seed_base,
        compare: args.compare,
        strict: args.strict,
        fallback_frozen: args.fallback_frozen,
    };
    let status = match run(&manifest) {
        Ok(report) => {
            for r in &report.runs {
                println!(
                    "{} seed {:>4} {:>8}: mean speed {:6.2} m/s, lane changes {:2}, min gap {}{}",
                    r.name,
                    r.seed,
                    r.predictor,
                    r.mean_speed,
                    r.lane_changes,
                    r.min_gap.map_or("-".into(), |g| format!("{g:.2} m")),
                    if r.completed { "" } else { "  COLLISION" },
                );
            }
            for c in &report.comparison {
                println!("seed {:>4}: external - frozen mean speed {:+.3} m/s", c.seed, c.mean_speed_delta);
            }
            println!("wrote {}", manifest.out.display());
            report.status()
        }
        Err(err) => {
            log::error!("{err}");
            err.exit_code()
        }
    };
    ExitCode::from(status.code() as u8)
}
