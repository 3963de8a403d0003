//! Command-line front end for `obsprune`: argument and config resolution,
//! experiment drivers and report emission.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
//! 4 disagreement with an oracle or a checked bound.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod suite;

pub use commands::{bound_trials, compare_report, execute, run, BoundConfig};
pub use error::{CliError, Result};
