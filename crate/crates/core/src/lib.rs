//! Event-camera visual teach-and-repeat.
//!
//! The pipeline turns event streams into binary frames ([`frame`]), records
//! a topometric map of frames and odometry poses during a teach run
//! ([`map`]), and during repeat runs matches incoming frames against the
//! map with FFT cross-correlation ([`correlation`]) to correct an
//! odometry-driven goal follower ([`controller`]). A planar simulator
//! ([`sim`]) supplies worlds, event streams and ground truth; [`eval`]
//! scores the resulting trajectories and times the vision step.

pub mod config;
pub mod controller;
pub mod correlation;
pub mod eval;
pub mod event;
pub mod frame;
pub mod map;
pub mod pose;
pub mod sim;

pub use correlation::{CorrelationEngine, CorrelationResult, SearchSpace};
pub use event::Event;
pub use frame::{CompressedFrame, EventFrame, MatchFrame};
pub use map::{MapNode, TopometricMap};
pub use pose::Pose2D;
