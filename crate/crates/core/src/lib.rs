//! Object-relative visual-inertial state estimation.
//!
//! An error-state Kalman filter propagates an IMU pose with inertial samples
//! and corrects it with 6-DoF object pose detections from a camera. Each
//! object carries its own world frame; one anchor object's world is held
//! fixed to make the problem observable. The crate also contains a sensor
//! simulator, trajectory evaluation and file formats for running
//! reproducible experiments.

pub mod config;
pub mod error;
pub mod eval;
pub mod filter;
pub mod log;
pub mod pipeline;
pub mod propagation;
pub mod sim;
pub mod so3;
pub mod state;
pub mod update;

pub use config::ExperimentConfig;
pub use error::{ConfigError, EvalError, FilterError, IoError, PipelineError, SimError, So3Error};
pub use eval::{RmseReport, Trajectory};
pub use filter::Filter;
pub use log::MeasurementLog;
pub use propagation::{ImuNoiseModel, ImuSample};
pub use so3::Pose;
pub use state::{FilterConfig, FilterState, ObjectId};
pub use update::{FrameMeasurement, ObjectPoseMeasurement, UpdateReport};
