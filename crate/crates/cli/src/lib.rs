//! Synthetic data, training loops, experiments and reports for the `mams`
//! command.

pub mod config;
pub mod data;
pub mod experiments;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, MaskMode, RoutingMode, PRESETS};
pub use data::{Dataset, Dynamics, SyntheticVideoSpec, Vocabulary};
pub use run::{evaluate, run_experiment, AuditRecord, EvalMetrics, MetricsReport, RunOutput, Trainer};
