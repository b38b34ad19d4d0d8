//! Deterministic simulation of two quadrotors capturing a ball that swings
//! under a moving target drone.
//!
//! The crate is split by concern: vehicle and pendulum dynamics in
//! [`world`], the synthetic camera in [`camera`], pixel-space tracking in
//! [`perception`], visual servoing and search in [`guidance`], the mission
//! state machines and radio link in [`coordination`], and the multirate run
//! loop with logging and Monte Carlo batches in [`engine`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod coordination;
pub mod engine;
pub mod error;
pub mod guidance;
pub mod perception;
pub mod plot;
pub mod world;

pub use camera::{CameraIntrinsics, CameraMount, DetectionClass, ImageDetection};
pub use coordination::{MissionPhase, Role};
pub use engine::{
    monte_carlo, parse_config, run_scenario, LogDetail, McResult, Mode, RunSummary, ScenarioConfig, SimLog, Verdict,
};
pub use error::{Error, Result};
pub use perception::{TrackEstimate, TrackStatus};
pub use world::{BallState, Frame, UavState, Vec3, VelocityCommand};
