//! Counting metrics over classified label streams and regenerated trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Joints, PrimitiveLabel};
use crate::error::{Error, Result};

use super::esn::ClassifiedSequence;

/// Minimum length of a run of identical labels that counts as one occurrence.
pub const MIN_OCCURRENCE_RUN: usize = 20;

/// Divergence threshold in squared degrees.
pub const DIVERGENCE_THRESHOLD: f64 = 55.0;

/// Percentage of steps carrying each label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub not_classified: f64,
}

pub fn occupancy(seq: &ClassifiedSequence) -> Occupancy {
    let n = seq.len().max(1) as f64;
    let mut counts = [0usize; 4];
    for l in &seq.labels {
        counts[l.map_or(3, |p| p.index())] += 1;
    }
    let pct = |k: usize| 100.0 * counts[k] as f64 / n;
    Occupancy { a: pct(0), b: pct(1), c: pct(2), not_classified: pct(3) }
}

/// Primitive occurrences in order. Runs shorter than the minimum are ignored,
/// and neighbouring occurrences of the same primitive are merged, since they
/// are one primitive interrupted by a brief misclassification.
pub fn occurrences(seq: &ClassifiedSequence) -> Vec<PrimitiveLabel> {
    let mut out: Vec<PrimitiveLabel> = Vec::new();
    let mut i = 0;
    while i < seq.labels.len() {
        let cur = seq.labels[i];
        let mut j = i + 1;
        while j < seq.labels.len() && seq.labels[j] == cur {
            j += 1;
        }
        if let Some(label) = cur {
            if j - i >= MIN_OCCURRENCE_RUN && out.last() != Some(&label) {
                out.push(label);
            }
        }
        i = j;
    }
    out
}

/// Number of B and C occurrences.
pub fn bc_counts(seq: &ClassifiedSequence) -> (usize, usize) {
    let occ = occurrences(seq);
    let b = occ.iter().filter(|l| **l == PrimitiveLabel::B).count();
    let c = occ.iter().filter(|l| **l == PrimitiveLabel::C).count();
    (b, c)
}

/// `(pct_B, pct_C)` over B/C occurrences, or `None` when there are none.
pub fn bc_ratio(seq: &ClassifiedSequence) -> Option<(f64, f64)> {
    ratio_from_counts(bc_counts(seq))
}

pub fn ratio_from_counts((b, c): (usize, usize)) -> Option<(f64, f64)> {
    if b + c == 0 {
        return None;
    }
    let pb = 100.0 * b as f64 / (b + c) as f64;
    Some((pb, 100.0 - pb))
}

/// Mean squared joint difference in degrees.
pub fn step_mse(a: &Joints, b: &Joints) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// First 1-based step where `seq` departs from `reference` by more than the
/// threshold, or the length when it never does.
pub fn first_divergence(reference: &[Joints], seq: &[Joints], threshold: f64) -> usize {
    reference.iter().zip(seq).position(|(r, s)| step_mse(r, s) > threshold).map_or(reference.len(), |k| k + 1)
}

/// Mean divergence step of all sequences from one picked at random.
pub fn divergence_step<R: Rng + ?Sized>(sequences: &[Vec<Joints>], threshold: f64, rng: &mut R) -> Result<f64> {
    if sequences.len() < 2 {
        return Err(Error::Usage("divergence needs at least two sequences".into()));
    }
    let len = sequences[0].len();
    if sequences.iter().any(|s| s.len() != len) {
        return Err(Error::Usage("divergence needs sequences of equal length".into()));
    }
    let r = rng.random_range(0..sequences.len());
    Ok(divergence_from_reference(sequences, r, threshold))
}

pub fn divergence_from_reference(sequences: &[Vec<Joints>], reference: usize, threshold: f64) -> f64 {
    let steps: Vec<usize> = sequences
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != reference)
        .map(|(_, s)| first_divergence(&sequences[reference], s, threshold))
        .collect();
    steps.iter().sum::<usize>() as f64 / steps.len() as f64
}

/// Percentage of considered steps where both agents show the same label.
/// Steps where either side is unclassified are dropped; with `bc_only`, steps
/// where both perform A are dropped too.
pub fn sync_rate_with(a: &ClassifiedSequence, b: &ClassifiedSequence, bc_only: bool) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("label streams differ in length ({} vs {})", a.len(), b.len())));
    }
    let mut considered = 0usize;
    let mut synced = 0usize;
    for (x, y) in a.labels.iter().zip(&b.labels) {
        let (Some(x), Some(y)) = (x, y) else { continue };
        if bc_only && *x == PrimitiveLabel::A && *y == PrimitiveLabel::A {
            continue;
        }
        considered += 1;
        if x == y {
            synced += 1;
        }
    }
    Ok((considered > 0).then(|| 100.0 * synced as f64 / considered as f64))
}

/// B/C synchronization rate.
pub fn sync_rate(a: &ClassifiedSequence, b: &ClassifiedSequence) -> Result<Option<f64>> {
    sync_rate_with(a, b, true)
}

/// Probability that two independent agents pick the same of B and C.
pub fn chance_rate(p_b1: f64, p_c1: f64, p_b2: f64, p_c2: f64) -> Result<f64> {
    for (b, c) in [(p_b1, p_c1), (p_b2, p_c2)] {
        if !(0.0..=1.0).contains(&b) || !(0.0..=1.0).contains(&c) || (b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("({b}, {c}) is not a probability pair")));
        }
    }
    Ok(p_b1 * p_b2 + p_c1 * p_c2)
}
