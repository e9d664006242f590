//! One step of the stochastic multiple-timescale cell, its readout and the
//! prior head. The flat kernels here are shared by every rollout.

use serde::{Deserialize, Serialize};

use super::config::{Layout, ModelConfig};
use super::gaussian::{clamp_log_std, LatentGaussian};
use super::params::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    /// Pre-activation internal state.
    pub h: Vec<f64>,
    /// `tanh(h)`.
    pub d: Vec<f64>,
    /// Latent sample that drove this step.
    pub z: Vec<f64>,
}

/// Deterministic part of the network state at one step, all layers flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub h: Vec<f64>,
    pub d: Vec<f64>,
}

impl NetworkState {
    /// The state before the first step: `h = d = 0`.
    pub fn initial(layout: &Layout) -> Self {
        Self { h: vec![0.0; layout.d_total], d: vec![0.0; layout.d_total] }
    }

    pub fn from_h(h: Vec<f64>) -> Self {
        let d = h.iter().map(|x| x.tanh()).collect();
        Self { h, d }
    }
}

/// Computes `h_t` and `d_t = tanh(h_t)` for all layers from the previous
/// activations and the current latent samples.
pub(crate) fn step_cell(
    layout: &Layout,
    config: &ModelConfig,
    params: &NetworkParams,
    h_prev: &[f64],
    d_prev: &[f64],
    z: &[f64],
    h_out: &mut [f64],
    d_out: &mut [f64],
) {
    let n = layout.num_layers();
    for l in 0..n {
        let lp = &params.layers[l];
        let dr = layout.d_range(l);
        let inv_tau = 1.0 / config.layers[l].tau;
        let out = &mut h_out[dr.clone()];
        out.iter_mut().for_each(|v| *v = 0.0);
        lp.w_dd.matvec_acc(&d_prev[dr.clone()], out);
        lp.w_zd.matvec_acc(&z[layout.z_range(l)], out);
        if let Some(w) = &lp.w_top {
            w.matvec_acc(&d_prev[layout.d_range(l + 1)], out);
        }
        if let Some(w) = &lp.w_bottom {
            w.matvec_acc(&d_prev[layout.d_range(l - 1)], out);
        }
        let leak = 1.0 - inv_tau;
        for ((o, &hp), d) in out.iter_mut().zip(&h_prev[dr.clone()]).zip(&mut d_out[dr.clone()]) {
            *o = leak * hp + inv_tau * *o;
            *d = o.tanh();
        }
    }
}

/// Prior mean and std of every layer given the previous activations,
/// together with the unclamped log-std argument (needed by the backward pass).
pub(crate) fn prior_raw(
    layout: &Layout,
    params: &NetworkParams,
    d_prev: &[f64],
    mu: &mut [f64],
    sigma: &mut [f64],
    log_sigma_raw: &mut [f64],
) {
    for l in 0..layout.num_layers() {
        let lp = &params.layers[l];
        let zr = layout.z_range(l);
        let dprev = &d_prev[layout.d_range(l)];
        lp.w_mu_p.matvec(dprev, &mut mu[zr.clone()]);
        lp.w_sigma_p.matvec(dprev, &mut log_sigma_raw[zr.clone()]);
        for i in zr {
            mu[i] = mu[i].tanh();
            sigma[i] = clamp_log_std(log_sigma_raw[i]).exp();
        }
    }
}

/// One step of the multiple-timescale cell over all layers.
pub fn cell_update(
    prev: &[LayerState],
    z_now: &[Vec<f64>],
    params: &NetworkParams,
    config: &ModelConfig,
) -> Result<Vec<LayerState>> {
    let layout = config.layout();
    let n = layout.num_layers();
    if prev.len() != n || z_now.len() != n {
        return Err(Error::Config(format!("expected {n} layers of state and latents")));
    }
    params.check_shapes(config)?;
    for l in 0..n {
        if prev[l].h.len() != layout.d_sizes[l] || prev[l].d.len() != layout.d_sizes[l] {
            return Err(Error::Config(format!("layer {l}: state size mismatch")));
        }
        if z_now[l].len() != layout.z_sizes[l] {
            return Err(Error::Config(format!("layer {l}: latent size mismatch")));
        }
    }
    let h_prev: Vec<f64> = prev.iter().flat_map(|s| s.h.iter().copied()).collect();
    let d_prev: Vec<f64> = prev.iter().flat_map(|s| s.d.iter().copied()).collect();
    let z: Vec<f64> = z_now.iter().flatten().copied().collect();
    let mut h = vec![0.0; layout.d_total];
    let mut d = vec![0.0; layout.d_total];
    step_cell(&layout, config, params, &h_prev, &d_prev, &z, &mut h, &mut d);
    Ok((0..n)
        .map(|l| LayerState { h: h[layout.d_range(l)].to_vec(), d: d[layout.d_range(l)].to_vec(), z: z_now[l].clone() })
        .collect())
}

/// `X = W_out · d1 + b_out`.
pub fn output_map(d1: &[f64], params: &NetworkParams) -> Result<Vec<f64>> {
    if d1.len() != params.w_out.cols {
        return Err(Error::Config(format!(
            "bottom-layer activation has {} units, readout expects {}",
            d1.len(),
            params.w_out.cols
        )));
    }
    let mut out = params.b_out.clone();
    params.w_out.matvec_acc(d1, &mut out);
    Ok(out)
}

/// Prior of layer `layer` at absolute time `t`: `N(0, I)` at `t = 1`,
/// otherwise a tanh mean head and an exp std head on the previous activation.
pub fn prior_head(
    d_prev: Option<&[f64]>,
    t: usize,
    layer: usize,
    params: &NetworkParams,
    config: &ModelConfig,
) -> Result<LatentGaussian> {
    if t < 1 {
        return Err(Error::Usage("time steps start at 1".into()));
    }
    let lc = config.layers.get(layer).ok_or_else(|| Error::Usage(format!("layer {layer} out of range")))?;
    match (t, d_prev) {
        (1, None) => Ok(LatentGaussian::standard(lc.z_size)),
        (1, Some(_)) => Err(Error::Usage("the first-step prior takes no previous activation".into())),
        (_, None) => Err(Error::Usage(format!("prior at t = {t} needs the previous activation"))),
        (_, Some(d)) => {
            if d.len() != lc.d_size {
                return Err(Error::Config(format!("layer {layer}: activation size mismatch")));
            }
            let lp = &params.layers[layer];
            let mut a_mu = vec![0.0; lc.z_size];
            let mut a_sigma = vec![0.0; lc.z_size];
            lp.w_mu_p.matvec(d, &mut a_mu);
            lp.w_sigma_p.matvec(d, &mut a_sigma);
            Ok(LatentGaussian::from_raw(&a_mu, &a_sigma))
        }
    }
}
