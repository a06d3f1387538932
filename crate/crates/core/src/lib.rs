//! Highway discretionary lane changes with model predictive control.
//!
//! A decision layer scores the current and adjacent lanes with a
//! longitudinal optimal control problem and picks one; a trajectory
//! controller then steers the dynamic bicycle model there while keeping a
//! safe gap to the predicted leader. [`simulation`] closes the loop on a
//! three-lane highway with IDM traffic.

pub mod config;
pub mod control;
pub mod decision;
pub mod dynamics;
pub mod prediction;
pub mod road;
pub mod run;
pub mod simulation;

pub use config::{load_config, ScenarioConfig};
pub use run::{run, RunManifest};
pub use simulation::{run_scenario, World};
