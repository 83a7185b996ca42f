//! Deterministic planar simulator: landmark worlds, a differential-drive
//! robot with drifting odometry, and an event camera.

mod camera;
mod drift;
mod runner;
mod world;

use thiserror::Error;

pub use camera::{render_events, EventRenderer, PinholeCamera};
pub use drift::{arc_step, DriftModel, SimState};
pub use runner::{
    read_trace_csv, run_repeat, run_teach, write_trace_csv, Failure, RepeatRun, RunOutcome,
    SimParams, TeachRun, TraceSample,
};
pub use world::{CorridorLayout, Landmark, Path, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid drift model: {0}")]
    InvalidDrift(String),
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("waypoint {index} unreachable within the time limit")]
    Unreachable { index: usize },
    #[error(transparent)]
    Map(#[from] crate::map::MapError),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
    #[error(transparent)]
    Control(#[from] crate::controller::ControlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
