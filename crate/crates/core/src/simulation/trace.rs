//! Per-frame trace rows, the event log, and the run summary, plus writers
//! for their on-disk forms (CSV, JSON lines, JSON).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::prediction::{PredictorKind, VehicleId};

/// One row of `<stem>.trace.csv`. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub frame: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub u: f64,
    pub v: f64,
    pub omega: f64,
    pub accel: f64,
    pub steer: f64,
    /// Lane nearest the ego centre after the step.
    pub lane: usize,
    pub target_lane: usize,
    pub changing: bool,
    /// `1` left, `0` keep, `-1` right; empty when no decision was attempted.
    pub l_sw: Option<i8>,
    pub u_d: Option<f64>,
    pub j_left: Option<f64>,
    pub j_current: Option<f64>,
    pub j_right: Option<f64>,
    pub leader_id: Option<u64>,
    pub leader_gap: Option<f64>,
    /// Closest bumper gap to any laterally overlapping vehicle.
    pub same_lane_gap: Option<f64>,
    /// Final-displacement error of the leader prediction made 50 frames ago.
    pub prediction_error: Option<f64>,
    pub control_cost: Option<f64>,
    pub iterations: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    LaneChangeStarted { from: usize, to: usize },
    LaneChangeCompleted { lane: usize },
    Fallback { reason: String },
    ConstraintViolation { constraint: String, value: f64 },
    PredictorFallback { target: VehicleId, reason: String },
    Collision { other: VehicleId, dx: f64, dy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub frame: u64,
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub predictor: PredictorKind,
    pub lane_changes_enabled: bool,
    pub frames: u64,
    pub simulated_s: f64,
    /// False when the run halted on a collision.
    pub completed: bool,
    pub collision_frame: Option<u64>,
    pub mean_speed: f64,
    pub lane_changes: usize,
    pub lane_change_starts: usize,
    pub decisions: usize,
    pub min_gap: Option<f64>,
    pub mean_prediction_error: Option<f64>,
    pub prediction_samples: usize,
    pub speed_violation_frames: usize,
    pub lateral_violation_frames: usize,
    pub control_fallbacks: usize,
    pub predictor_fallbacks: usize,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<StepTrace>,
    pub events: Vec<Event>,
    pub summary: RunSummary,
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub trace: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
}

pub fn write_run(dir: &Path, stem: &str, run: &RunOutput) -> std::io::Result<RunFiles> {
    std::fs::create_dir_all(dir)?;
    let files = RunFiles {
        trace: dir.join(format!("{stem}.trace.csv")),
        events: dir.join(format!("{stem}.events.jsonl")),
        summary: dir.join(format!("{stem}.summary.json")),
    };
    let mut csv = csv::Writer::from_path(&files.trace)?;
    for row in &run.trace {
        csv.serialize(row)?;
    }
    csv.flush()?;

    let mut events = BufWriter::new(File::create(&files.events)?);
    for e in &run.events {
        serde_json::to_writer(&mut events, e)?;
        events.write_all(b"\n")?;
    }
    events.flush()?;

    let mut summary = BufWriter::new(File::create(&files.summary)?);
    serde_json::to_writer_pretty(&mut summary, &run.summary)?;
    summary.write_all(b"\n")?;
    summary.flush()?;
    Ok(files)
}
