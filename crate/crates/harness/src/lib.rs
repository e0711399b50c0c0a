//! Scenario runner for the addps receivers.
//!
//! A scenario names a source, a codec, a channel, a diffusion prior and a
//! list of receivers. [`run_scenario`] evaluates every (receiver, SNR, seed)
//! cell and returns one [`ReportRow`] per cell; [`emit_report`] writes the
//! rows as CSV or JSON lines.

pub mod config;
mod error;
pub mod models;
pub mod oracle_suite;
pub mod receivers;
pub mod report;
pub mod run;
pub mod scenarios;
pub mod trace;

pub use config::{load_config, ExperimentConfig};
pub use error::HarnessError;
pub use receivers::{Receiver, ReceiverRegistry};
pub use report::{emit_report, ReportFormat, ReportRow};
pub use run::{run_scenario, run_scenario_with, RunOptions, RunOutput};

/// Artifact version recorded beside every report.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
