use serde::{Deserialize, Serialize};

use super::config::{Layout, ModelConfig};
use super::gaussian::LatentGaussian;
use crate::error::{Error, Result};

/// Free per-step variables defining the approximate posterior:
/// `mu_q = tanh(A_mu)`, `sigma_q = exp(A_sigma)`.
///
/// Covers the inclusive absolute time range `[start, start + len - 1]`
/// (time is 1-based). Values for all layers of one step are stored
/// contiguously, bottom layer first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSequence {
    pub start: usize,
    pub z_sizes: Vec<usize>,
    pub a_mu: Vec<f64>,
    pub a_sigma: Vec<f64>,
}

impl AdaptationSequence {
    pub fn zeros(config: &ModelConfig, start: usize, len: usize) -> Self {
        let z_sizes: Vec<usize> = config.layers.iter().map(|l| l.z_size).collect();
        let n = z_sizes.iter().sum::<usize>() * len;
        Self { start, z_sizes, a_mu: vec![0.0; n], a_sigma: vec![0.0; n] }
    }

    pub fn z_total(&self) -> usize {
        self.z_sizes.iter().sum()
    }

    pub fn len(&self) -> usize {
        let zt = self.z_total();
        if zt == 0 {
            0
        } else {
            self.a_mu.len() / zt
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Last covered absolute time step.
    pub fn end(&self) -> usize {
        self.start + self.len() - 1
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.len()
    }

    fn offset(&self, t: usize, l: usize) -> Result<std::ops::Range<usize>> {
        if !self.contains(t) {
            return Err(Error::Usage(format!(
                "time step {t} outside adaptation window [{}, {}]",
                self.start,
                self.start + self.len() - 1
            )));
        }
        if l >= self.z_sizes.len() {
            return Err(Error::Usage(format!("layer {l} out of range")));
        }
        let base = (t - self.start) * self.z_total() + self.z_sizes[..l].iter().sum::<usize>();
        Ok(base..base + self.z_sizes[l])
    }

    /// All layers' `(A_mu, A_sigma)` of step `t`, concatenated.
    pub fn step(&self, t: usize) -> Result<(&[f64], &[f64])> {
        if !self.contains(t) {
            return Err(Error::Usage(format!("time step {t} outside adaptation window")));
        }
        let zt = self.z_total();
        let r = (t - self.start) * zt..(t - self.start + 1) * zt;
        Ok((&self.a_mu[r.clone()], &self.a_sigma[r]))
    }

    pub fn step_mut(&mut self, t: usize) -> Result<(&mut [f64], &mut [f64])> {
        if !self.contains(t) {
            return Err(Error::Usage(format!("time step {t} outside adaptation window")));
        }
        let zt = self.z_total();
        let r = (t - self.start) * zt..(t - self.start + 1) * zt;
        Ok((&mut self.a_mu[r.clone()], &mut self.a_sigma[r]))
    }

    /// Posterior of layer `l` at absolute time `t`.
    pub fn posterior(&self, t: usize, l: usize) -> Result<LatentGaussian> {
        let r = self.offset(t, l)?;
        Ok(LatentGaussian::from_raw(&self.a_mu[r.clone()], &self.a_sigma[r]))
    }

    /// Copy of the sub-range `[from, to]`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from > to || !self.contains(from) || !self.contains(to) {
            return Err(Error::Usage(format!("cannot slice [{from}, {to}] out of the adaptation window")));
        }
        let zt = self.z_total();
        let r = (from - self.start) * zt..(to - self.start + 1) * zt;
        Ok(Self {
            start: from,
            z_sizes: self.z_sizes.clone(),
            a_mu: self.a_mu[r.clone()].to_vec(),
            a_sigma: self.a_sigma[r].to_vec(),
        })
    }

    /// Appends one step after the current end.
    pub fn push_step(&mut self, a_mu: &[f64], a_sigma: &[f64]) {
        assert_eq!(a_mu.len(), self.z_total());
        assert_eq!(a_sigma.len(), self.z_total());
        self.a_mu.extend_from_slice(a_mu);
        self.a_sigma.extend_from_slice(a_sigma);
    }

    /// Drops the earliest steps so the window starts at `new_start`.
    pub fn advance_start(&mut self, new_start: usize) {
        if new_start <= self.start {
            return;
        }
        let n = (new_start - self.start).min(self.len());
        let zt = self.z_total();
        self.a_mu.drain(..n * zt);
        self.a_sigma.drain(..n * zt);
        self.start += n;
    }

    pub fn matches_layout(&self, layout: &Layout) -> bool {
        self.z_sizes == layout.z_sizes
    }

    pub fn is_finite(&self) -> bool {
        self.a_mu.iter().chain(&self.a_sigma).all(|v| v.is_finite())
    }
}
