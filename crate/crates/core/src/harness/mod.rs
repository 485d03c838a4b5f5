//! Training, evaluation and multi-seed experiments.

mod config;
mod experiment;
mod train;

pub use config::{DataSource, ExperimentConfig, PseudoMode, ReportMode};
pub use experiment::{
    run_config, run_experiment, sweep, AggregateMetrics, ExperimentReport, Summary, SweepReport,
};
pub use train::{evaluate, pseudo_labels_for, single_label_accuracy, train, SeedRun, TrainOutcome};
