//! Experiment orchestration for the `chunkdelay` command-line tool.

pub mod config;
pub mod exit;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use pipeline::{cmd_q1, cmd_q2, cmd_q3, Report};
