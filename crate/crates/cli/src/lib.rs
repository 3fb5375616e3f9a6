//! Configuration, artifact emission and the acceptance suite for the
//! `platoon` command-line driver.

pub mod config;
pub mod output;
pub mod plot;
pub mod verify;

pub use config::{parse_config, ConfigError, Overrides, RunConfig};
pub use output::{emit_outputs, trajectory_csv, OutputError};
pub use plot::{render_timespace_plot, PlotError};
pub use verify::{run_suite, CheckResult};
