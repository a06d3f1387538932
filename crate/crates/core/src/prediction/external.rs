//! Client for an out-of-process trajectory predictor.
//!
//! Wire format, one JSON object per line in each direction:
//!
//! ```text
//! -> {"id": 7, "target": 12, "history": [[frame, vehicle_id, x, y], ...]}
//! <- {"id": 7, "trajectory": [[x, y], ... 50 pairs ...]}
//! <- {"id": 7, "error": "reason"}            (server-side rejection)
//! ```
//!
//! At most one request is in flight. Replies whose id does not match the
//! outstanding request (late answers to requests that already timed out) are
//! discarded.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    predict_frozen, PredictedTrajectory, TrajectoryHistory, VehicleId, NEIGHBOR_RADIUS_M,
    PREDICTION_HORIZON,
};

pub const DEFAULT_DEADLINE: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("failed to start predictor `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("predictor command line is empty or unparsable: `{0}`")]
    BadCommand(String),
    #[error("protocol violation ({reason}): {raw}")]
    Protocol { reason: String, raw: String },
    #[error("predictor rejected request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("predictor process closed its output")]
    Disconnected,
    #[error("i/o error talking to predictor: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: u64,
    pub target: u64,
    /// `[frame, vehicle_id, x, y]` rows.
    pub history: Vec<(u64, u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct ExternalPredictor {
    writer: Box<dyn Write + Send>,
    replies: Receiver<String>,
    child: Option<Child>,
    next_id: u64,
    deadline: Duration,
}

impl std::fmt::Debug for ExternalPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPredictor")
            .field("pid", &self.child.as_ref().map(Child::id))
            .field("next_id", &self.next_id)
            .field("deadline", &self.deadline)
            .finish()
    }
}

impl ExternalPredictor {
    /// Start `command` (split with shell quoting rules, not run through a shell).
    pub fn spawn(command: &str, deadline: Duration) -> Result<Self, ExternalError> {
        let words = shlex::split(command)
            .filter(|w| !w.is_empty())
            .ok_or_else(|| ExternalError::BadCommand(command.to_string()))?;
        let mut child = Command::new(&words[0])
            .args(&words[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ExternalError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_streams(stdin, BufReader::new(stdout), deadline);
        client.child = Some(child);
        Ok(client)
    }

    /// Attach to an already-connected pair of streams.
    pub fn from_streams<W, R>(writer: W, reader: R, deadline: Duration) -> Self
    where
        W: Write + Send + 'static,
        R: BufRead + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("predictor-reader".into())
            .spawn(move || {
                for line in reader.lines() {
                    let Ok(line) = line else { break };
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn predictor reader thread");
        Self {
            writer: Box::new(writer),
            replies: rx,
            child: None,
            next_id: 1,
            deadline,
        }
    }

    pub fn deadline(&self) -> Duration {
        self.deadline
    }

    /// Send one request and wait for its 50-point answer.
    pub fn request(&mut self, target: u64, history: Vec<(u64, u64, f64, f64)>) -> Result<Vec<(f64, f64)>, ExternalError> {
        let id = self.next_id;
        self.next_id += 1;
        let req = PredictRequest { id, target, history };
        let mut line = serde_json::to_string(&req).expect("request serialises");
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;

        let started = Instant::now();
        loop {
            let remaining = self
                .deadline
                .checked_sub(started.elapsed())
                .ok_or(ExternalError::Timeout(self.deadline))?;
            let raw = match self.replies.recv_timeout(remaining) {
                Ok(raw) => raw,
                Err(RecvTimeoutError::Timeout) => return Err(ExternalError::Timeout(self.deadline)),
                Err(RecvTimeoutError::Disconnected) => return Err(ExternalError::Disconnected),
            };
            let resp: PredictResponse = serde_json::from_str(&raw).map_err(|e| ExternalError::Protocol {
                reason: e.to_string(),
                raw: raw.clone(),
            })?;
            if resp.id < id {
                log::debug!("discarding stale predictor reply {}", resp.id);
                continue;
            }
            if resp.id != id {
                return Err(ExternalError::Protocol {
                    reason: format!("reply id {} does not match request {id}", resp.id),
                    raw,
                });
            }
            if let Some(message) = resp.error {
                return Err(ExternalError::Remote { id, message });
            }
            let Some(points) = resp.trajectory else {
                return Err(ExternalError::Protocol {
                    reason: "missing `trajectory`".into(),
                    raw,
                });
            };
            if points.len() != PREDICTION_HORIZON {
                return Err(ExternalError::Protocol {
                    reason: format!("expected {PREDICTION_HORIZON} points, got {}", points.len()),
                    raw,
                });
            }
            if points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ExternalError::Protocol {
                    reason: "non-finite coordinate".into(),
                    raw,
                });
            }
            return Ok(points.into_iter().map(|[x, y]| (x, y)).collect());
        }
    }

    /// Predict `target` from its neighbourhood history. On timeout the
    /// frozen-time extrapolation of `current` is returned and the boolean is
    /// set; other failures are returned as errors.
    pub fn predict_external(
        &mut self,
        history: &TrajectoryHistory,
        target: VehicleId,
        current: (f64, f64, f64),
        ts: f64,
    ) -> Result<(PredictedTrajectory, bool), ExternalError> {
        let rows = history.neighborhood(target, NEIGHBOR_RADIUS_M);
        match self.request(target.0, rows) {
            Ok(points) => Ok((PredictedTrajectory { target, points }, false)),
            Err(ExternalError::Timeout(d)) => {
                log::warn!("predictor missed its {d:?} deadline for vehicle {target}; using frozen-time");
                let (x, y, speed) = current;
                Ok((predict_frozen(target, x, y, speed.max(0.0), PREDICTION_HORIZON, ts), true))
            }
            Err(e) => Err(e),
        }
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
