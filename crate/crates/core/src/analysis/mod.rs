//! Stand-alone and interaction analyses: primitive classification, BC-ratio,
//! divergence of regenerated trajectories and synchronization metrics.

pub mod dyad;
pub mod esn;
pub mod metrics;
pub mod regen;

pub use dyad::{dyad_summary, DyadSummary};
pub use esn::{default_classifier, esn_classify, esn_fit, ClassifiedSequence, EsnConfig, EsnModel};
pub use metrics::{bc_counts, bc_ratio, chance_rate, divergence_step, occupancy, sync_rate, Occupancy};
pub use regen::{prior_regeneration, regen_report, RegenReport, Regeneration};
