//! Batch front end: run configs, subcommand dispatch, reports and plots.

pub mod config;
pub mod plot;
pub mod run;

pub use config::{parse_config, GateRecord, RunConfig};
pub use run::{execute, Command, Outcome, Report, Status};
