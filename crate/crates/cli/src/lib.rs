//! Batch front end: configuration, pipeline, reports and plot data.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use config::{load_config, parse_config, ExperimentConfig, REFERENCE_CONFIG};
pub use error::{CliError, Stage};
pub use pipeline::{run, ExitReport, RunOptions, Verb};
pub use plot::ellipsoid_polyline;

/// Environment variable holding the worker count for campaigns and checks.
pub const WORKERS_ENV: &str = "QUANTSWITCH_WORKERS";

/// Exit code for a stage error.
pub const EXIT_STAGE_ERROR: i32 = 2;
