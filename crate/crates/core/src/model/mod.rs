//! The predictive-coding variational RNN: stochastic multiple-timescale
//! cells, prior/posterior latent heads, the free-energy objective and its
//! exact gradient.

pub mod adaptation;
pub mod cell;
pub mod config;
pub mod gaussian;
pub mod params;
pub mod rollout;

pub use adaptation::AdaptationSequence;
pub use cell::{cell_update, output_map, prior_head, LayerState, NetworkState};
pub use config::{LayerConfig, Layout, ModelConfig};
pub use gaussian::{kl_gauss, sample_latent, LatentGaussian};
pub use params::{LayerParams, NetworkParams};
pub use rollout::{
    backward, backward_acc, draw_noise, free_energy, rollout_posterior, rollout_posterior_with_noise, rollout_prior,
    FreeEnergyReport, Gradients, PriorRollout, Rollout,
};

/// Posterior of layer `l` at time `t` from the adaptation variables.
pub fn posterior_head(a: &AdaptationSequence, t: usize, l: usize) -> crate::Result<LatentGaussian> {
    a.posterior(t, l)
}
