//! Experiment harness: configuration, runs, metrics and presets.

pub mod calibrate;
pub mod complexity;
pub mod config;
pub mod experiment;
pub mod presets;

pub use calibrate::{calibrate_blame, Calibration, CalibrationSettings};
pub use complexity::{complexity_report, ComplexityReport};
pub use config::{ConfigError, Prepared, RunConfig};
pub use experiment::{run_config, run_prepared, run_prepared_until, write_outputs, Outcome, Summary};
pub use presets::{criterion, preset, Verdict, CRITERIA, PRESETS};
