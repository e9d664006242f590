//! Interaction metrics of a dyad run.

use serde::{Deserialize, Serialize};

use super::esn::{esn_classify, ClassifiedSequence, EsnModel};
use super::metrics::{bc_counts, chance_rate, occupancy, ratio_from_counts, sync_rate_with, Occupancy};
use crate::dataset::PfsmSpec;
use crate::error::Result;
use crate::interaction::InteractionTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadSummary {
    pub labels: [String; 2],
    pub occupancy: [Occupancy; 2],
    pub bc_counts: [(usize, usize); 2],
    pub bc_ratio: [Option<(f64, f64)>; 2],
    /// B/C synchronization rate, pure A-A steps excluded.
    pub sync_rate: Option<f64>,
    /// Synchronization over all classified steps.
    pub sync_rate_all: Option<f64>,
    /// Chance of B/C agreement given the two trained preferences.
    pub chance_rate: f64,
    pub mean_kl: [Vec<f64>; 2],
}

pub fn classify_trace(trace: &InteractionTrace, esn: &EsnModel) -> [ClassifiedSequence; 2] {
    [esn_classify(esn, &trace.emitted(0)), esn_classify(esn, &trace.emitted(1))]
}

pub fn dyad_summary(trace: &InteractionTrace, esn: &EsnModel, specs: [&PfsmSpec; 2]) -> Result<DyadSummary> {
    let [c0, c1] = classify_trace(trace, esn);
    let counts = [bc_counts(&c0), bc_counts(&c1)];
    Ok(DyadSummary {
        labels: [c0.label_string(), c1.label_string()],
        occupancy: [occupancy(&c0), occupancy(&c1)],
        bc_counts: counts,
        bc_ratio: [ratio_from_counts(counts[0]), ratio_from_counts(counts[1])],
        sync_rate: sync_rate_with(&c0, &c1, true)?,
        sync_rate_all: sync_rate_with(&c0, &c1, false)?,
        chance_rate: chance_rate(specs[0].p_b, specs[0].p_c, specs[1].p_b, specs[1].p_c)?,
        mean_kl: [trace.mean_kl(0), trace.mean_kl(1)],
    })
}
