//! Experiment configuration, Monte-Carlo sweeps, metrics and reporting.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::{ExperimentSpec, Scale};
pub use runner::{run_experiment, summarize, ExperimentOutput, MetricRecord, SummaryRow};
