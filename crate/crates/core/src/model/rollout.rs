//! Posterior and prior rollouts, the free-energy objective and its exact
//! gradient by backpropagation through time.
//!
//! A posterior rollout covers the window of an [`AdaptationSequence`],
//! starting from a fixed state at the step before the window. Every
//! intermediate needed by [`backward`] is kept in flat per-step buffers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adaptation::AdaptationSequence;
use super::cell::{prior_raw, step_cell, NetworkState};
use super::config::{Layout, ModelConfig};
use super::gaussian::{clamp_log_std, clamp_log_std_grad, kl_unit};
use super::params::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Absolute time of the first step.
    pub start: usize,
    pub len: usize,
    pub layout: Layout,
    /// State at `start - 1`.
    pub init: NetworkState,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
    pub mu_q: Vec<f64>,
    pub sigma_q: Vec<f64>,
    pub a_sigma_raw: Vec<f64>,
    pub mu_p: Vec<f64>,
    pub sigma_p: Vec<f64>,
    pub log_sigma_p_raw: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl Rollout {
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }

    fn index(&self, t: usize) -> usize {
        assert!(t >= self.start && t < self.start + self.len, "time {t} outside rollout");
        t - self.start
    }

    pub fn output(&self, t: usize) -> &[f64] {
        let k = self.index(t);
        let o = self.layout.output_dims;
        &self.outputs[k * o..(k + 1) * o]
    }

    pub fn state(&self, t: usize) -> NetworkState {
        if t + 1 == self.start {
            return self.init.clone();
        }
        let k = self.index(t);
        let dt = self.layout.d_total;
        NetworkState { h: self.h[k * dt..(k + 1) * dt].to_vec(), d: self.d[k * dt..(k + 1) * dt].to_vec() }
    }

    pub fn final_state(&self) -> NetworkState {
        if self.len == 0 {
            self.init.clone()
        } else {
            self.state(self.end())
        }
    }

    fn z_slice<'a>(&self, buf: &'a [f64], t: usize, l: usize) -> &'a [f64] {
        let k = self.index(t);
        let r = self.layout.z_range(l);
        let base = k * self.layout.z_total;
        &buf[base + r.start..base + r.end]
    }

    pub fn prior_mu(&self, t: usize, l: usize) -> &[f64] {
        self.z_slice(&self.mu_p, t, l)
    }

    pub fn prior_sigma(&self, t: usize, l: usize) -> &[f64] {
        self.z_slice(&self.sigma_p, t, l)
    }

    pub fn posterior_mu(&self, t: usize, l: usize) -> &[f64] {
        self.z_slice(&self.mu_q, t, l)
    }

    pub fn posterior_sigma(&self, t: usize, l: usize) -> &[f64] {
        self.z_slice(&self.sigma_q, t, l)
    }

    /// Unweighted KL of layer `l` at time `t`.
    pub fn kl(&self, t: usize, l: usize) -> f64 {
        let k = self.index(t);
        let base = k * self.layout.z_total;
        self.layout
            .z_range(l)
            .map(|i| {
                let j = base + i;
                kl_unit(self.mu_q[j], self.sigma_q[j], self.mu_p[j], self.sigma_p[j])
            })
            .sum()
    }
}

/// Draws the standard-normal noise for `len` steps of all layers.
pub fn draw_noise<R: Rng + ?Sized>(layout: &Layout, len: usize, rng: &mut R) -> Vec<f64> {
    (0..len * layout.z_total).map(|_| StandardNormal.sample(rng)).collect()
}

/// Posterior rollout over the window covered by `adaptation`, sampling
/// `z = tanh(A_mu) + exp(A_sigma) ⊙ eps` with noise from `rng`.
pub fn rollout_posterior<R: Rng + ?Sized>(
    adaptation: &AdaptationSequence,
    params: &NetworkParams,
    config: &ModelConfig,
    init: &NetworkState,
    rng: &mut R,
) -> Result<Rollout> {
    let noise = draw_noise(&config.layout(), adaptation.len(), rng);
    rollout_posterior_with_noise(adaptation, params, config, init, &noise)
}

/// Posterior rollout with caller-supplied noise (`len × z_total`, step-major).
pub fn rollout_posterior_with_noise(
    adaptation: &AdaptationSequence,
    params: &NetworkParams,
    config: &ModelConfig,
    init: &NetworkState,
    noise: &[f64],
) -> Result<Rollout> {
    let layout = config.layout();
    if !adaptation.matches_layout(&layout) {
        return Err(Error::Config("adaptation variables do not match the latent layout".into()));
    }
    if adaptation.start < 1 {
        return Err(Error::Usage("time steps start at 1".into()));
    }
    if init.h.len() != layout.d_total || init.d.len() != layout.d_total {
        return Err(Error::Config("initial state does not match the layer layout".into()));
    }
    let n = adaptation.len();
    let (dt, zt, od) = (layout.d_total, layout.z_total, layout.output_dims);
    if noise.len() != n * zt {
        return Err(Error::Config(format!("noise has {} values, expected {}", noise.len(), n * zt)));
    }
    let mut r = Rollout {
        start: adaptation.start,
        len: n,
        init: init.clone(),
        h: vec![0.0; n * dt],
        d: vec![0.0; n * dt],
        z: vec![0.0; n * zt],
        eps: noise.to_vec(),
        mu_q: vec![0.0; n * zt],
        sigma_q: vec![0.0; n * zt],
        a_sigma_raw: adaptation.a_sigma.clone(),
        mu_p: vec![0.0; n * zt],
        sigma_p: vec![1.0; n * zt],
        log_sigma_p_raw: vec![0.0; n * zt],
        outputs: vec![0.0; n * od],
        layout,
    };
    for k in 0..n {
        let t = r.start + k;
        let zr = k * zt..(k + 1) * zt;
        for i in zr.clone() {
            r.mu_q[i] = adaptation.a_mu[i].tanh();
            r.sigma_q[i] = clamp_log_std(adaptation.a_sigma[i]).exp();
            r.z[i] = r.mu_q[i] + r.sigma_q[i] * r.eps[i];
        }
        if t > 1 {
            let prev_d = if k == 0 { r.init.d.as_slice() } else { &r.d[(k - 1) * dt..k * dt] };
            prior_raw(
                &r.layout,
                params,
                prev_d,
                &mut r.mu_p[zr.clone()],
                &mut r.sigma_p[zr.clone()],
                &mut r.log_sigma_p_raw[zr.clone()],
            );
        }
        let (done, rest) = r.h.split_at_mut(k * dt);
        let (done_d, rest_d) = r.d.split_at_mut(k * dt);
        let (prev_h, prev_d) = if k == 0 {
            (r.init.h.as_slice(), r.init.d.as_slice())
        } else {
            (&done[(k - 1) * dt..], &done_d[(k - 1) * dt..])
        };
        step_cell(&r.layout, config, params, prev_h, prev_d, &r.z[zr], &mut rest[..dt], &mut rest_d[..dt]);
        let out = &mut r.outputs[k * od..(k + 1) * od];
        out.copy_from_slice(&params.b_out);
        params.w_out.matvec_acc(&rest_d[..r.layout.d_sizes[0]], out);
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    /// Negative lower bound: `-(accuracy - complexity)`.
    pub total: f64,
    /// Gaussian log-likelihood with unit variance, constants dropped.
    pub accuracy: f64,
    /// Meta-prior weighted KL summed over steps and layers.
    pub complexity: f64,
    /// Unweighted KL, indexed `[layer][step within window]`.
    pub complexity_per_layer: Vec<Vec<f64>>,
    /// Time-averaged unweighted KL per layer.
    pub e_z_mean: Vec<f64>,
}

fn check_targets(rollout: &Rollout, targets: &[f64], mask: &[bool]) -> Result<usize> {
    let od = rollout.layout.output_dims;
    if rollout.len == 0 {
        return Err(Error::Usage("free energy of an empty window".into()));
    }
    if mask.len() != od {
        return Err(Error::Config(format!("accuracy mask has {} entries, expected {od}", mask.len())));
    }
    if targets.len() != rollout.len * od {
        return Err(Error::Config(format!(
            "targets have {} values, expected {} steps × {od}",
            targets.len(),
            rollout.len
        )));
    }
    let nx = mask.iter().filter(|m| **m).count();
    if nx == 0 {
        return Err(Error::Usage("accuracy mask selects no output dimension".into()));
    }
    Ok(nx)
}

/// Evaluates the meta-prior weighted free energy of a posterior rollout.
///
/// `targets` holds one row of `output_dims` values per window step; only
/// dimensions selected by `mask` enter the accuracy term.
pub fn free_energy(
    rollout: &Rollout,
    targets: &[f64],
    mask: &[bool],
    config: &ModelConfig,
) -> Result<FreeEnergyReport> {
    let nx = check_targets(rollout, targets, mask)? as f64;
    let lay = &rollout.layout;
    let od = lay.output_dims;
    let mut sq_err = 0.0;
    for k in 0..rollout.len {
        for i in 0..od {
            if mask[i] {
                let e = rollout.outputs[k * od + i] - targets[k * od + i];
                sq_err += e * e;
            }
        }
    }
    let accuracy = -0.5 * sq_err / nx;
    let n_layers = lay.num_layers();
    let mut per_layer = vec![vec![0.0; rollout.len]; n_layers];
    let mut complexity = 0.0;
    for k in 0..rollout.len {
        let t = rollout.start + k;
        for (l, row) in per_layer.iter_mut().enumerate() {
            let kl = rollout.kl(t, l);
            row[k] = kl;
            complexity += config.meta_prior(l, t) / lay.z_sizes[l] as f64 * kl;
        }
    }
    let e_z_mean = per_layer.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    Ok(FreeEnergyReport {
        total: -(accuracy - complexity),
        accuracy,
        complexity,
        complexity_per_layer: per_layer,
        e_z_mean,
    })
}

/// Gradients of the free energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: NetworkParams,
    /// Same layout as the rollout's adaptation window.
    pub a_mu: Vec<f64>,
    pub a_sigma: Vec<f64>,
}

/// Exact gradient of [`free_energy`]`.total` with respect to every network
/// parameter and every adaptation variable of the window.
pub fn backward(
    rollout: &Rollout,
    targets: &[f64],
    mask: &[bool],
    params: &NetworkParams,
    config: &ModelConfig,
) -> Result<Gradients> {
    let mut g = NetworkParams::zeros(config);
    let n = rollout.len * rollout.layout.z_total;
    let mut a_mu = vec![0.0; n];
    let mut a_sigma = vec![0.0; n];
    backward_acc(rollout, targets, mask, params, config, Some(&mut g), &mut a_mu, &mut a_sigma)?;
    Ok(Gradients { params: g, a_mu, a_sigma })
}

/// Accumulating backward pass. Parameter gradients are skipped when
/// `param_grads` is `None`, which is used when only the posterior adapts.
/// Adaptation gradients are written (not accumulated).
#[allow(clippy::too_many_arguments)]
pub fn backward_acc(
    rollout: &Rollout,
    targets: &[f64],
    mask: &[bool],
    params: &NetworkParams,
    config: &ModelConfig,
    mut param_grads: Option<&mut NetworkParams>,
    grad_a_mu: &mut [f64],
    grad_a_sigma: &mut [f64],
) -> Result<()> {
    let nx = check_targets(rollout, targets, mask)? as f64;
    let lay = &rollout.layout;
    let (dt, zt, od) = (lay.d_total, lay.z_total, lay.output_dims);
    let n = rollout.len;
    let consistent = [
        rollout.h.len() == n * dt,
        rollout.d.len() == n * dt,
        rollout.z.len() == n * zt,
        rollout.eps.len() == n * zt,
        rollout.mu_q.len() == n * zt,
        rollout.sigma_q.len() == n * zt,
        rollout.a_sigma_raw.len() == n * zt,
        rollout.mu_p.len() == n * zt,
        rollout.sigma_p.len() == n * zt,
        rollout.log_sigma_p_raw.len() == n * zt,
        rollout.outputs.len() == n * od,
        rollout.init.d.len() == dt,
    ];
    if consistent.iter().any(|ok| !ok) {
        return Err(Error::Usage("rollout is missing intermediates needed by the backward pass".into()));
    }
    if grad_a_mu.len() != n * zt || grad_a_sigma.len() != n * zt {
        return Err(Error::Config("adaptation gradient buffers have the wrong size".into()));
    }
    let n_layers = lay.num_layers();
    let d0 = lay.d_sizes[0];

    let mut gd_acc = vec![0.0; dt];
    let mut gh_leak = vec![0.0; dt];
    let mut gd = vec![0.0; dt];
    let mut gh = vec![0.0; dt];
    let mut next_gd = vec![0.0; dt];
    let mut next_gh = vec![0.0; dt];
    let mut u = vec![0.0; dt];
    let mut gz = vec![0.0; zt];
    let mut ga_mu_p = vec![0.0; zt];
    let mut ga_sigma_p = vec![0.0; zt];
    let mut gx = vec![0.0; od];

    for k in (0..n).rev() {
        let t = rollout.start + k;
        let d_k = &rollout.d[k * dt..(k + 1) * dt];
        let d_prev: &[f64] = if k == 0 { &rollout.init.d } else { &rollout.d[(k - 1) * dt..k * dt] };

        // accuracy
        for i in 0..od {
            gx[i] = if mask[i] { (rollout.outputs[k * od + i] - targets[k * od + i]) / nx } else { 0.0 };
        }
        gd.copy_from_slice(&gd_acc);
        params.w_out.matvec_t_acc(&gx, &mut gd[..d0]);
        if let Some(g) = param_grads.as_deref_mut() {
            g.w_out.outer_acc(&gx, &d_k[..d0]);
            for (b, x) in g.b_out.iter_mut().zip(&gx) {
                *b += x;
            }
        }

        for i in 0..dt {
            gh[i] = gd[i] * (1.0 - d_k[i] * d_k[i]) + gh_leak[i];
        }

        next_gd.iter_mut().for_each(|v| *v = 0.0);
        gz.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..n_layers {
            let lp = &params.layers[l];
            let dr = lay.d_range(l);
            let zr = lay.z_range(l);
            let inv_tau = 1.0 / config.layers[l].tau;
            for i in dr.clone() {
                u[i] = gh[i] * inv_tau;
                next_gh[i] = gh[i] * (1.0 - inv_tau);
            }
            let ul = &u[dr.clone()];
            lp.w_dd.matvec_t_acc(ul, &mut next_gd[dr.clone()]);
            lp.w_zd.matvec_t_acc(ul, &mut gz[zr.clone()]);
            if let Some(w) = &lp.w_top {
                w.matvec_t_acc(ul, &mut next_gd[lay.d_range(l + 1)]);
            }
            if let Some(w) = &lp.w_bottom {
                w.matvec_t_acc(ul, &mut next_gd[lay.d_range(l - 1)]);
            }
            if let Some(g) = param_grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                gl.w_dd.outer_acc(ul, &d_prev[dr.clone()]);
                gl.w_zd.outer_acc(ul, &rollout.z[k * zt + zr.start..k * zt + zr.end]);
                if let Some(w) = &mut gl.w_top {
                    w.outer_acc(ul, &d_prev[lay.d_range(l + 1)]);
                }
                if let Some(w) = &mut gl.w_bottom {
                    w.outer_acc(ul, &d_prev[lay.d_range(l - 1)]);
                }
            }
        }

        // complexity and reparameterized sampling
        for l in 0..n_layers {
            let c = config.meta_prior(l, t) / lay.z_sizes[l] as f64;
            for i in lay.z_range(l) {
                let j = k * zt + i;
                let (mq, sq, mp, sp) = (rollout.mu_q[j], rollout.sigma_q[j], rollout.mu_p[j], rollout.sigma_p[j]);
                let diff = mq - mp;
                let sp2 = sp * sp;
                let g_mq = gz[i] + c * diff / sp2;
                let g_sq = gz[i] * rollout.eps[j] + c * (sq / sp2 - 1.0 / sq);
                grad_a_mu[j] = g_mq * (1.0 - mq * mq);
                grad_a_sigma[j] = g_sq * sq * clamp_log_std_grad(rollout.a_sigma_raw[j]);
                if t > 1 {
                    let g_mp = -c * diff / sp2;
                    let g_sp = c * (1.0 / sp - (sq * sq + diff * diff) / (sp2 * sp));
                    ga_mu_p[i] = g_mp * (1.0 - mp * mp);
                    ga_sigma_p[i] = g_sp * sp * clamp_log_std_grad(rollout.log_sigma_p_raw[j]);
                }
            }
            if t > 1 {
                let lp = &params.layers[l];
                let dr = lay.d_range(l);
                let zr = lay.z_range(l);
                lp.w_mu_p.matvec_t_acc(&ga_mu_p[zr.clone()], &mut next_gd[dr.clone()]);
                lp.w_sigma_p.matvec_t_acc(&ga_sigma_p[zr.clone()], &mut next_gd[dr.clone()]);
                if let Some(g) = param_grads.as_deref_mut() {
                    g.layers[l].w_mu_p.outer_acc(&ga_mu_p[zr.clone()], &d_prev[dr.clone()]);
                    g.layers[l].w_sigma_p.outer_acc(&ga_sigma_p[zr], &d_prev[dr]);
                }
            }
        }

        std::mem::swap(&mut gd_acc, &mut next_gd);
        std::mem::swap(&mut gh_leak, &mut next_gh);
    }
    Ok(())
}

/// Output of a prior (generative) rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorRollout {
    pub start: usize,
    pub output_dims: usize,
    /// `horizon × output_dims`, step-major.
    pub outputs: Vec<f64>,
    pub mu_p: Vec<f64>,
    pub sigma_p: Vec<f64>,
    pub final_state: NetworkState,
}

impl PriorRollout {
    pub fn len(&self) -> usize {
        if self.output_dims == 0 {
            0
        } else {
            self.outputs.len() / self.output_dims
        }
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output(&self, k: usize) -> &[f64] {
        &self.outputs[k * self.output_dims..(k + 1) * self.output_dims]
    }
}

/// Generates `horizon` steps from the prior, starting after `init` at
/// absolute time `start`. With `deterministic` the noise is zero and the
/// latent equals the prior mean.
pub fn rollout_prior<R: Rng + ?Sized>(
    init: &NetworkState,
    start: usize,
    horizon: usize,
    params: &NetworkParams,
    config: &ModelConfig,
    rng: &mut R,
    deterministic: bool,
) -> Result<PriorRollout> {
    let lay = config.layout();
    if start < 1 {
        return Err(Error::Usage("time steps start at 1".into()));
    }
    if init.h.len() != lay.d_total || init.d.len() != lay.d_total {
        return Err(Error::Config("initial state does not match the layer layout".into()));
    }
    let (zt, od) = (lay.z_total, lay.output_dims);
    let mut out = PriorRollout {
        start,
        output_dims: od,
        outputs: vec![0.0; horizon * od],
        mu_p: vec![0.0; horizon * zt],
        sigma_p: vec![1.0; horizon * zt],
        final_state: init.clone(),
    };
    let mut raw = vec![0.0; zt];
    let mut z = vec![0.0; zt];
    let mut h = vec![0.0; lay.d_total];
    let mut d = vec![0.0; lay.d_total];
    for k in 0..horizon {
        let t = start + k;
        let zr = k * zt..(k + 1) * zt;
        if t > 1 {
            prior_raw(
                &lay,
                params,
                &out.final_state.d,
                &mut out.mu_p[zr.clone()],
                &mut out.sigma_p[zr.clone()],
                &mut raw,
            );
        }
        for (i, j) in zr.enumerate() {
            let e: f64 = if deterministic { 0.0 } else { StandardNormal.sample(rng) };
            z[i] = out.mu_p[j] + out.sigma_p[j] * e;
        }
        step_cell(&lay, config, params, &out.final_state.h, &out.final_state.d, &z, &mut h, &mut d);
        std::mem::swap(&mut out.final_state.h, &mut h);
        std::mem::swap(&mut out.final_state.d, &mut d);
        let o = &mut out.outputs[k * od..(k + 1) * od];
        o.copy_from_slice(&params.b_out);
        params.w_out.matvec_acc(&out.final_state.d[..lay.d_sizes[0]], o);
    }
    Ok(out)
}
