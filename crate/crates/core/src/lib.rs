//! Actor-identifier-critic tracking control for nonlinear plants whose
//! sensor and actuator links drop packets.

pub mod actor;
pub mod aic;
pub mod channels;
pub mod config;
pub mod critic;
pub mod dynamics;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod identifier;
pub mod metrics;
pub mod nn;

pub use aic::{run_episode, run_episode_observed, AicController, StepRecord, TrajectoryLog};
pub use config::RunConfig;
pub use dynamics::BenchmarkKind;
pub use error::{AicError, Result};
