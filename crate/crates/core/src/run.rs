//! Batch runs: seed sweeps, the predictor process, and the tables on disk.
//!
//! Layout of the output directory:
//!
//! ```text
//! out/
//!   config.json            resolved scenario (seed of the first run)
//!   runs/<stem>.trace.csv  one per replication and predictor
//!   runs/<stem>.events.jsonl
//!   runs/<stem>.summary.json
//!   metrics.csv            one row per run
//!   comparison.csv         with --compare: per-seed frozen vs external
//!   summary.json           aggregate over all runs
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::config::{load_config, ConfigError, ScenarioConfig};
use crate::prediction::{ExternalError, ExternalPredictor, LeaderPredictor, PredictorKind};
use crate::simulation::trace::{write_run, RunSummary};
use crate::simulation::{run_scenario, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides the config's predictor when set.
    pub predictor: Option<PredictorKind>,
    pub predictor_cmd: Option<String>,
    pub seeds: u64,
    /// First seed; the config's seed when unset.
    pub seed_base: Option<u64>,
    /// Run every seed with both predictors.
    pub compare: bool,
    pub strict: bool,
    /// Continue with frozen-time if the predictor process cannot start.
    pub fallback_frozen: bool,
}

impl RunManifest {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            out: out.into(),
            predictor: None,
            predictor_cmd: None,
            seeds: 1,
            seed_base: None,
            compare: false,
            strict: false,
            fallback_frozen: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid run: {0}")]
    Manifest(String),
    #[error("predictor: {0}")]
    Predictor(#[from] ExternalError),
    #[error("external predictor requested but no --predictor-cmd given")]
    MissingPredictorCommand,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl RunError {
    pub fn exit_code(&self) -> ExitStatus {
        match self {
            RunError::Config(_) | RunError::Manifest(_) => ExitStatus::ConfigError,
            RunError::Simulation(SimError::Config(_) | SimError::Invalid(_)) => ExitStatus::ConfigError,
            RunError::Predictor(_) | RunError::MissingPredictorCommand => ExitStatus::PredictorFailure,
            RunError::Io { .. } | RunError::Simulation(_) => ExitStatus::Failure,
        }
    }
}

/// Process exit codes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Failure = 1,
    ConfigError = 2,
    PredictorFailure = 3,
    Collision = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// One row of `comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub frozen_mean_speed: f64,
    pub external_mean_speed: f64,
    /// External minus frozen.
    pub mean_speed_delta: f64,
    pub frozen_min_gap: Option<f64>,
    pub external_min_gap: Option<f64>,
    pub frozen_prediction_error: Option<f64>,
    pub external_prediction_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub runs: Vec<RunSummary>,
    pub comparison: Vec<ComparisonRow>,
    /// `(predictor, seed)` of every run that ended in a collision.
    pub failed: Vec<(PredictorKind, u64)>,
    /// Set when the predictor process could not start and frozen-time ran instead.
    pub predictor_fallback: bool,
}

impl RunReport {
    pub fn status(&self) -> ExitStatus {
        if self.failed.is_empty() {
            ExitStatus::Success
        } else {
            ExitStatus::Collision
        }
    }

    pub fn mean_speed(&self, kind: PredictorKind) -> Option<f64> {
        let speeds: Vec<f64> = self.runs.iter().filter(|r| r.predictor == kind).map(|r| r.mean_speed).collect();
        (!speeds.is_empty()).then(|| speeds.iter().sum::<f64>() / speeds.len() as f64)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

fn run_stem(config: &ScenarioConfig, kind: PredictorKind) -> String {
    let name: String = config
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{name}_{kind}_seed{}", config.seed)
}

/// Build the leader predictor for `kind`, spawning the process if needed.
/// Returns the predictor and whether it fell back to frozen-time.
fn connect(
    kind: PredictorKind,
    manifest: &RunManifest,
    deadline: Duration,
) -> Result<(LeaderPredictor, bool), RunError> {
    if kind == PredictorKind::Frozen {
        return Ok((LeaderPredictor::frozen(), false));
    }
    let command = manifest.predictor_cmd.as_deref().ok_or(RunError::MissingPredictorCommand)?;
    match ExternalPredictor::spawn(command, deadline) {
        Ok(client) => Ok((LeaderPredictor::external(client), false)),
        Err(err) if manifest.fallback_frozen => {
            log::warn!("{err}; continuing with frozen-time prediction");
            Ok((LeaderPredictor::frozen(), true))
        }
        Err(err) => Err(err.into()),
    }
}

/// Execute a manifest. Collisions do not abort the sweep; they are listed in
/// the report and turn [`RunReport::status`] into [`ExitStatus::Collision`].
pub fn run(manifest: &RunManifest) -> Result<RunReport, RunError> {
    if manifest.seeds == 0 {
        return Err(RunError::Manifest("--seeds must be at least 1".into()));
    }
    let base = load_config(&manifest.config, manifest.strict)?;
    let primary = manifest.predictor.unwrap_or(base.predictor);
    let kinds = if manifest.compare {
        vec![PredictorKind::Frozen, PredictorKind::External]
    } else {
        vec![primary]
    };
    let seed_base = manifest.seed_base.unwrap_or(base.seed);
    let seeds: Vec<u64> = (0..manifest.seeds)
        .map(|i| seed_base.checked_add(i).ok_or_else(|| RunError::Manifest("seed range overflows u64".into())))
        .collect::<Result<_, _>>()?;

    let runs_dir = manifest.out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;
    let resolved = ScenarioConfig { seed: seeds[0], ..base.clone() };
    let config_path = manifest.out.join("config.json");
    std::fs::write(&config_path, resolved.to_json() + "\n").map_err(io_err(&config_path))?;

    let deadline = Duration::from_millis(base.predictor_deadline_ms);
    let mut report = RunReport { runs: Vec::new(), comparison: Vec::new(), failed: Vec::new(), predictor_fallback: false };
    // What each run asked for; a fallback run reports frozen-time in its summary.
    let mut requested = Vec::new();
    for &kind in &kinds {
        // One connection per predictor kind, reused across the sweep.
        let (mut predictor, fell_back) = connect(kind, manifest, deadline)?;
        report.predictor_fallback |= fell_back;
        for &seed in &seeds {
            let config = ScenarioConfig { seed, predictor: kind, ..base.clone() };
            log::info!("running {} with {kind} prediction, seed {seed}", config.name);
            let output = run_scenario(&config, &mut predictor)?;
            write_run(&runs_dir, &run_stem(&config, kind), &output).map_err(io_err(&runs_dir))?;
            if !output.summary.completed {
                report.failed.push((kind, seed));
            }
            report.runs.push(output.summary);
            requested.push(kind);
        }
    }

    if manifest.compare {
        for &seed in &seeds {
            let find = |k: PredictorKind| {
                report.runs.iter().zip(&requested).find(|(r, &req)| r.seed == seed && req == k).map(|(r, _)| r)
            };
            let (Some(f), Some(e)) = (find(PredictorKind::Frozen), find(PredictorKind::External)) else {
                continue;
            };
            report.comparison.push(ComparisonRow {
                seed,
                frozen_mean_speed: f.mean_speed,
                external_mean_speed: e.mean_speed,
                mean_speed_delta: e.mean_speed - f.mean_speed,
                frozen_min_gap: f.min_gap,
                external_min_gap: e.min_gap,
                frozen_prediction_error: f.mean_prediction_error,
                external_prediction_error: e.mean_prediction_error,
            });
        }
        write_csv(&manifest.out.join("comparison.csv"), &report.comparison)?;
    }
    write_csv(&manifest.out.join("metrics.csv"), &report.runs)?;

    let summary_path = manifest.out.join("summary.json");
    let aggregate = serde_json::json!({
        "config": manifest.config.display().to_string(),
        "seeds": seeds,
        "predictors": kinds,
        "runs": report.runs.len(),
        "collisions": report.failed.len(),
        "predictor_fallback": report.predictor_fallback,
        "mean_speed": kinds.iter().map(|&k| (k.to_string(), report.mean_speed(k))).collect::<std::collections::BTreeMap<_, _>>(),
        "min_gap": report.runs.iter().filter_map(|r| r.min_gap).reduce(f64::min),
    });
    let text = serde_json::to_string_pretty(&aggregate).expect("summary serialises") + "\n";
    std::fs::write(&summary_path, text).map_err(io_err(&summary_path))?;
    Ok(report)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let to_io = |e: csv::Error| RunError::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for row in rows {
        w.serialize(row).map_err(to_io)?;
    }
    w.flush().map_err(io_err(path))
}
