//! Diagonal Gaussians over the latent units, the reparameterized sampler and
//! the closed-form KL divergence used by the complexity term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound applied to every log-std argument before exponentiation.
pub const LOG_STD_CLAMP: f64 = 10.0;

#[inline]
pub fn clamp_log_std(x: f64) -> f64 {
    x.clamp(-LOG_STD_CLAMP, LOG_STD_CLAMP)
}

/// Derivative of [`clamp_log_std`]: 1 strictly inside the bound, 0 outside.
#[inline]
pub fn clamp_log_std_grad(x: f64) -> f64 {
    if x.abs() < LOG_STD_CLAMP {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(n: usize) -> Self {
        Self { mu: vec![0.0; n], sigma: vec![1.0; n] }
    }

    /// `mu = tanh(a_mu)`, `sigma = exp(clamp(a_sigma))`.
    pub fn from_raw(a_mu: &[f64], a_sigma: &[f64]) -> Self {
        Self {
            mu: a_mu.iter().map(|a| a.tanh()).collect(),
            sigma: a_sigma.iter().map(|&a| clamp_log_std(a).exp()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `z = mu + sigma ⊙ epsilon`.
pub fn sample_latent(g: &LatentGaussian, epsilon: &[f64]) -> Vec<f64> {
    debug_assert_eq!(g.mu.len(), epsilon.len());
    g.mu.iter().zip(&g.sigma).zip(epsilon).map(|((m, s), e)| m + s * e).collect()
}

/// Per-unit KL divergence `KL(N(mq, sq²) || N(mp, sp²))`.
#[inline]
pub fn kl_unit(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    let diff = mq - mp;
    (sp / sq).ln() + (sq * sq + diff * diff) / (2.0 * sp * sp) - 0.5
}

/// `KL(q || p)` summed over units.
pub fn kl_gauss(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    if q.dim() != p.dim() || q.mu.len() != q.sigma.len() || p.mu.len() != p.sigma.len() {
        return Err(Error::Usage(format!("KL dimension mismatch: {} vs {}", q.dim(), p.dim())));
    }
    if q.sigma.iter().chain(&p.sigma).any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("KL requires strictly positive standard deviations".into()));
    }
    Ok((0..q.dim()).map(|i| kl_unit(q.mu[i], q.sigma[i], p.mu[i], p.sigma[i])).sum())
}
