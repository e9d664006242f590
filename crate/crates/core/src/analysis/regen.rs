//! Prior regeneration: replay the first two learned posterior steps of a
//! training sample, then let the prior generate the rest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::esn::{esn_classify, ClassifiedSequence, EsnModel};
use super::metrics::{bc_counts, divergence_step, occupancy, ratio_from_counts, Occupancy, DIVERGENCE_THRESHOLD};
use crate::dataset::{proprio_from_output, Joints};
use crate::error::{Error, Result};
use crate::model::{rollout_posterior, rollout_prior, AdaptationSequence, ModelConfig, NetworkParams, NetworkState};

/// Number of posterior steps used to initialize a regeneration.
pub const BOOTSTRAP_STEPS: usize = 2;

/// One generated sequence of normalized network outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regeneration {
    pub output_dims: usize,
    /// `horizon × output_dims`, step-major.
    pub outputs: Vec<f64>,
}

impl Regeneration {
    pub fn len(&self) -> usize {
        self.outputs.len() / self.output_dims.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output(&self, k: usize) -> &[f64] {
        &self.outputs[k * self.output_dims..(k + 1) * self.output_dims]
    }

    /// Joint trajectory in degrees.
    pub fn proprio_degrees(&self) -> Vec<Joints> {
        (0..self.len()).map(|k| proprio_from_output(self.output(k))).collect()
    }
}

/// `n_repeats` sequences of `horizon` steps each, with fresh noise per repeat.
/// Steps up to two are posterior reconstructions, the rest are prior output.
pub fn prior_regeneration<R: Rng + ?Sized>(
    params: &NetworkParams,
    config: &ModelConfig,
    adaptation: &AdaptationSequence,
    n_repeats: usize,
    horizon: usize,
    rng: &mut R,
    deterministic: bool,
) -> Result<Vec<Regeneration>> {
    let lay = config.layout();
    if adaptation.start != 1 || adaptation.len() < BOOTSTRAP_STEPS.min(horizon) {
        return Err(Error::Usage("stored adaptation variables for the first two steps are missing".into()));
    }
    if !adaptation.matches_layout(&lay) {
        return Err(Error::Config("adaptation variables do not match the layer layout".into()));
    }
    let boot_len = BOOTSTRAP_STEPS.min(horizon);
    let boot = adaptation.slice(1, boot_len)?;
    let mut out = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        let mut outputs = Vec::with_capacity(horizon * lay.output_dims);
        if boot_len > 0 {
            let post = rollout_posterior(&boot, params, config, &NetworkState::initial(&lay), rng)?;
            outputs.extend_from_slice(&post.outputs);
            let prior = rollout_prior(
                &post.final_state(),
                boot_len + 1,
                horizon - boot_len,
                params,
                config,
                rng,
                deterministic,
            )?;
            outputs.extend_from_slice(&prior.outputs);
        }
        out.push(Regeneration { output_dims: lay.output_dims, outputs });
    }
    Ok(out)
}

/// Stand-alone metrics of a set of regenerations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenReport {
    /// Mean step occupancy over the regenerations.
    pub occupancy: Occupancy,
    /// B/C occurrence counts pooled over the regenerations.
    pub bc_counts: (usize, usize),
    pub bc_ratio: Option<(f64, f64)>,
    pub divergence_step: f64,
    pub labels: Vec<String>,
}

pub fn regen_report<R: Rng + ?Sized>(regens: &[Regeneration], esn: &EsnModel, rng: &mut R) -> Result<RegenReport> {
    if regens.is_empty() {
        return Err(Error::Usage("no regenerations to analyze".into()));
    }
    let proprio: Vec<Vec<Joints>> = regens.iter().map(|r| r.proprio_degrees()).collect();
    let classified: Vec<ClassifiedSequence> = proprio.iter().map(|p| esn_classify(esn, p)).collect();
    let n = classified.len() as f64;
    let mut occ = Occupancy { a: 0.0, b: 0.0, c: 0.0, not_classified: 0.0 };
    let (mut b, mut c) = (0, 0);
    for cls in &classified {
        let o = occupancy(cls);
        occ.a += o.a / n;
        occ.b += o.b / n;
        occ.c += o.c / n;
        occ.not_classified += o.not_classified / n;
        let (nb, nc) = bc_counts(cls);
        b += nb;
        c += nc;
    }
    let divergence_step = if proprio.len() >= 2 {
        divergence_step(&proprio, DIVERGENCE_THRESHOLD, rng)?
    } else {
        proprio[0].len() as f64
    };
    Ok(RegenReport {
        occupancy: occ,
        bc_counts: (b, c),
        bc_ratio: ratio_from_counts((b, c)),
        divergence_step,
        labels: classified.iter().map(|c| c.label_string()).collect(),
    })
}
