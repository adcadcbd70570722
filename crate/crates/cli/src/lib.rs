//! Experiment drivers, configuration and reports behind the `parabolic` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{run, Context, SECTIONS};
pub use config::{ConfigError, Overrides, RunConfig};
pub use report::{Check, Outcome, Relation, Report};
