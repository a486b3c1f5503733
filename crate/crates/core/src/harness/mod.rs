//! Seeded end-to-end experiments and their reports.

pub mod config;
pub mod report;
pub mod results;
pub mod run;
pub mod session;

pub use config::{AugmentationPreset, ExperimentConfig, Method, ProblemConfig, TransferConfig};
pub use results::{aggregate, Aggregate, AggregateEntry, ResultRow};
pub use run::{run_experiment, run_seed, write_report, RunOutcome};
pub use session::{derive_seed, Session};

/// Accuracy of perfect gating on a balanced mixture: the mean of the
/// experts' own accuracies.
pub fn ideal_target(accuracies: &[f64]) -> f64 {
    accuracies.iter().sum::<f64>() / accuracies.len() as f64
}
