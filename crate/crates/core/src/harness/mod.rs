//! Metrics, protocols, ablations, reports, persistence and the CLI.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod verify;

pub use config::{EvalConfig, ExperimentConfig, ProtocolKind};
pub use metrics::{acc2, acc7, evaluate, f1, Acc2Mode, Metrics};
pub use report::Report;
