//! Thermogram-based anomaly detection for antenna-array testing.

pub mod config;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod frame;
pub mod model;
pub mod pipeline;
pub mod simulator;
pub mod trainer;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use frame::{Frame, Grid};
