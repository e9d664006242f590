//! Experiment pipeline around the `pvrnn` crate: plan files, stage runners
//! with idempotent artifacts, analysis tables and reports.

pub mod analyze;
pub mod artifacts;
pub mod plan;
pub mod report;
pub mod stages;

pub use plan::{ExperimentPlan, Stage};
pub use stages::run_plan;

/// Process exit code for an error: 2 for configuration and usage problems,
/// 3 for numerical failures, 1 otherwise.
pub fn exit_code(err: &pvrnn::Error) -> i32 {
    match err {
        pvrnn::Error::Config(_) | pvrnn::Error::Usage(_) => 2,
        pvrnn::Error::Numerical(_) => 3,
        _ => 1,
    }
}
