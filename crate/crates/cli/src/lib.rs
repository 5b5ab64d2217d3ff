//! Experiment runner for the speed-gradient closed loops in `nsg_core`.
//!
//! An experiment is a flat `key = value` file ([`config`]). Running it
//! produces `trajectory.csv`, `events.json` and `report.json`; the report
//! carries the outcome of every enabled check.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod config;
pub mod run;
pub mod scan;
pub mod summary;

pub use batch::run_batch;
pub use config::{Check, ConfigError, Coordinates, ExperimentConfig, Plant};
pub use run::{execute, run_experiment, AnyTrajectory, CheckResult, RunOutcome, RunReport};
pub use scan::{run_scan, scan};
pub use summary::{render_table, summarize, Summary};
