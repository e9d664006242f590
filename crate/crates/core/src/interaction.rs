//! Dyadic interaction: two trained networks with frozen parameters exchange
//! exteroception in lockstep. Each agent predicts its next step from the
//! prior, acts on the proprioceptive part, observes the counterpart's
//! mirrored hand positions and then adapts its posterior over a sliding
//! window by minimizing the free energy of the exteroceptive error alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    exteroception, mirror, normalize_extero, proprio_from_output, Hands, Joints, EXTERO_DIMS, PROPRIO_DIMS,
};
use crate::error::{Error, Result};
use crate::model::{
    backward_acc, draw_noise, free_energy, rollout_posterior, rollout_posterior_with_noise, rollout_prior,
    AdaptationSequence, ModelConfig, NetworkParams, NetworkState,
};
use crate::optim::{AdamConfig, AdamMoments};
use crate::training::TrainState;

/// Steps replayed from a stored training posterior before the first observation.
pub const BOOTSTRAP_STEPS: usize = 2;

/// Noise draws used to compare the windowed free energy before and after inference.
const EVAL_DRAWS: usize = 4;

const ATANH_LIMIT: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub window: usize,
    pub epochs: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// One seed per agent.
    pub seeds: [u64; 2],
    /// Start each new posterior step at `N(0, I)` instead of the current prior.
    pub zero_init: bool,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self { window: 70, epochs: 200, steps: 200, learning_rate: 0.01, seeds: [1, 2], zero_init: false }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("interaction window must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("inference epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("inference learning rate must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }

    /// First step of the inference window ending at `t`.
    pub fn window_start(&self, t: usize) -> usize {
        if t > self.window {
            t + 1 - self.window
        } else {
            1
        }
    }
}

/// Per-agent record of one interaction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub t: usize,
    /// Emitted joint angles in degrees.
    pub emitted: Joints,
    /// Predicted hand positions (normalized) before the observation.
    pub predicted_extero: Hands,
    /// Observed hand positions (normalized) of the mirrored counterpart.
    pub observed_extero: Hands,
    /// Unweighted KL per layer at step `t` after inference.
    pub kl: Vec<f64>,
    /// Prior and posterior means of all latent units at step `t`.
    pub mu_p: Vec<f64>,
    pub mu_q: Vec<f64>,
    /// Windowed free energy before and after inference; absent while bootstrapping.
    pub free_energy_before: Option<f64>,
    pub free_energy_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InteractionTrace {
    pub agents: [Vec<AgentStep>; 2],
}

impl InteractionTrace {
    pub fn len(&self) -> usize {
        self.agents[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents[0].is_empty()
    }

    pub fn emitted(&self, agent: usize) -> Vec<Joints> {
        self.agents[agent].iter().map(|s| s.emitted).collect()
    }

    /// Mean KL per layer over the steps that followed the bootstrap.
    pub fn mean_kl(&self, agent: usize) -> Vec<f64> {
        let rows: Vec<&AgentStep> = self.agents[agent].iter().filter(|s| s.free_energy_after.is_some()).collect();
        let n_layers = rows.first().map_or(0, |r| r.kl.len());
        (0..n_layers).map(|l| rows.iter().map(|r| r.kl[l]).sum::<f64>() / rows.len() as f64).collect()
    }
}

/// One agent: frozen trained parameters plus the live posterior window.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub params: NetworkParams,
    pub config: ModelConfig,
    /// Stored posterior of the first steps of a training sample.
    pub bootstrap: AdaptationSequence,
    pub window: AdaptationSequence,
    /// `states[t]` is the committed state after step `t`; `states[0]` is the initial state.
    pub states: Vec<NetworkState>,
    /// Normalized observations, `observations[t - 1]` for step `t`.
    pub observations: Vec<Hands>,
    pending: Option<Pending>,
    bootstrap_trace: Option<BootTrace>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
struct Pending {
    t: usize,
    output: Vec<f64>,
    mu_p: Vec<f64>,
    sigma_p: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BootTrace {
    outputs: Vec<Vec<f64>>,
    kl: Vec<Vec<f64>>,
    mu_p: Vec<Vec<f64>>,
    mu_q: Vec<Vec<f64>>,
    states: Vec<NetworkState>,
}

impl AgentRuntime {
    /// Agent seeded with `seed`, bootstrapped from the stored posterior of `bootstrap`.
    pub fn new(params: NetworkParams, config: ModelConfig, bootstrap: &AdaptationSequence, seed: u64) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        let lay = config.layout();
        if !bootstrap.matches_layout(&lay) {
            return Err(Error::Config("bootstrap adaptation does not match the layer layout".into()));
        }
        if bootstrap.start != 1 || bootstrap.len() < BOOTSTRAP_STEPS {
            return Err(Error::Usage("stored adaptation variables for the first two steps are missing".into()));
        }
        let boot = bootstrap.slice(1, BOOTSTRAP_STEPS)?;
        Ok(Self {
            params,
            config,
            window: AdaptationSequence { start: 1, z_sizes: boot.z_sizes.clone(), a_mu: vec![], a_sigma: vec![] },
            bootstrap: boot,
            states: vec![NetworkState::initial(&lay)],
            observations: Vec::new(),
            pending: None,
            bootstrap_trace: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Agent built from a training checkpoint; the bootstrap sample is drawn
    /// at random with the agent's own generator.
    pub fn from_checkpoint(state: &TrainState, seed: u64) -> Result<Self> {
        if state.adaptation.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no trained adaptation variables".into()));
        }
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        pick.set_stream(u64::MAX);
        let sample = pick.random_range(0..state.adaptation.len());
        Self::new(state.params.clone(), state.model.clone(), &state.adaptation[sample], seed)
    }

    /// Last committed step.
    pub fn current_step(&self) -> usize {
        self.states.len() - 1
    }

    fn run_bootstrap(&mut self) -> Result<()> {
        let lay = self.config.layout();
        let r = rollout_posterior(&self.bootstrap, &self.params, &self.config, &self.states[0], &mut self.rng)?;
        let nl = lay.num_layers();
        let mut trace = BootTrace { outputs: vec![], kl: vec![], mu_p: vec![], mu_q: vec![], states: vec![] };
        for t in 1..=BOOTSTRAP_STEPS {
            trace.outputs.push(r.output(t).to_vec());
            trace.states.push(r.state(t));
            trace.kl.push((0..nl).map(|l| r.kl(t, l)).collect());
            trace.mu_p.push((0..nl).flat_map(|l| r.prior_mu(t, l).to_vec()).collect());
            trace.mu_q.push((0..nl).flat_map(|l| r.posterior_mu(t, l).to_vec()).collect());
        }
        self.bootstrap_trace = Some(trace);
        Ok(())
    }

    /// Next-step output: the stored posterior while bootstrapping, then a
    /// one-step sampled prior rollout from the committed state.
    pub fn predict(&mut self, t: usize) -> Result<Vec<f64>> {
        if t != self.current_step() + 1 {
            return Err(Error::Usage(format!("agent is at step {}, cannot predict step {t}", self.current_step())));
        }
        let zt = self.config.layout().z_total;
        let pending = if t <= BOOTSTRAP_STEPS {
            if self.bootstrap_trace.is_none() {
                self.run_bootstrap()?;
            }
            let b = self.bootstrap_trace.as_ref().expect("bootstrap trace");
            Pending { t, output: b.outputs[t - 1].clone(), mu_p: vec![0.0; zt], sigma_p: vec![1.0; zt] }
        } else {
            let p = rollout_prior(&self.states[t - 1], t, 1, &self.params, &self.config, &mut self.rng, false)?;
            Pending { t, output: p.outputs, mu_p: p.mu_p, sigma_p: p.sigma_p }
        };
        let out = pending.output.clone();
        self.pending = Some(pending);
        Ok(out)
    }

    /// Records the observation for the predicted step, adapts the posterior
    /// window and commits the resulting states.
    pub fn observe(&mut self, observation: Hands, config: &InteractionConfig) -> Result<AgentStep> {
        let pending = self.pending.take().ok_or_else(|| Error::Usage("observe called before predict".into()))?;
        let t = pending.t;
        self.observations.push(observation);
        let emitted = proprio_from_output(&pending.output);
        let mut predicted_extero = [0.0; EXTERO_DIMS];
        predicted_extero.copy_from_slice(&pending.output[PROPRIO_DIMS..PROPRIO_DIMS + EXTERO_DIMS]);

        if t <= BOOTSTRAP_STEPS {
            let b = self.bootstrap_trace.as_ref().expect("bootstrap trace");
            let (a_mu, a_sigma) = self.bootstrap.step(t)?;
            self.window.push_step(a_mu, a_sigma);
            self.states.push(b.states[t - 1].clone());
            return Ok(AgentStep {
                t,
                emitted,
                predicted_extero,
                observed_extero: observation,
                kl: b.kl[t - 1].clone(),
                mu_p: b.mu_p[t - 1].clone(),
                mu_q: b.mu_q[t - 1].clone(),
                free_energy_before: None,
                free_energy_after: None,
            });
        }

        self.window = bootstrap_window(&self.window, t, &pending.mu_p, &pending.sigma_p, config.zero_init);
        self.window.advance_start(config.window_start(t));
        let ws = self.window.start;
        let init = self.states[ws - 1].clone();
        let lay = self.config.layout();
        let od = lay.output_dims;
        let mut targets = vec![0.0; self.window.len() * od];
        for (k, obs) in self.observations[ws - 1..t].iter().enumerate() {
            targets[k * od + PROPRIO_DIMS..k * od + PROPRIO_DIMS + EXTERO_DIMS].copy_from_slice(obs);
        }
        let mut mask = vec![false; od];
        mask[PROPRIO_DIMS..PROPRIO_DIMS + EXTERO_DIMS].iter_mut().for_each(|m| *m = true);

        let eval_noise: Vec<Vec<f64>> =
            (0..EVAL_DRAWS).map(|_| draw_noise(&lay, self.window.len(), &mut self.rng)).collect();
        let before = self.mean_free_energy(&init, &targets, &mask, &eval_noise)?;

        let adam = config.adam();
        let mut moments = AdamMoments::new(2 * self.window.a_mu.len());
        let mut g_mu = vec![0.0; self.window.a_mu.len()];
        let mut g_sigma = vec![0.0; self.window.a_sigma.len()];
        for epoch in 0..config.epochs {
            let r = rollout_posterior(&self.window, &self.params, &self.config, &init, &mut self.rng)?;
            backward_acc(&r, &targets, &mask, &self.params, &self.config, None, &mut g_mu, &mut g_sigma)?;
            if g_mu.iter().chain(&g_sigma).any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite inference gradient at step {t}, epoch {}",
                    epoch + 1
                )));
            }
            moments.update(
                [self.window.a_mu.as_mut_slice(), self.window.a_sigma.as_mut_slice()],
                &[&g_mu, &g_sigma],
                &adam,
            );
        }
        if !self.window.is_finite() {
            return Err(Error::Numerical(format!("non-finite adaptation variables after inference at step {t}")));
        }
        let after = self.mean_free_energy(&init, &targets, &mask, &eval_noise)?;
        if !after.is_finite() {
            return Err(Error::Numerical(format!("non-finite inference loss at step {t}")));
        }

        let r = rollout_posterior(&self.window, &self.params, &self.config, &init, &mut self.rng)?;
        self.states.truncate(ws);
        for k in ws..=t {
            self.states.push(r.state(k));
        }
        let nl = lay.num_layers();
        Ok(AgentStep {
            t,
            emitted,
            predicted_extero,
            observed_extero: observation,
            kl: (0..nl).map(|l| r.kl(t, l)).collect(),
            mu_p: (0..nl).flat_map(|l| r.prior_mu(t, l).to_vec()).collect(),
            mu_q: (0..nl).flat_map(|l| r.posterior_mu(t, l).to_vec()).collect(),
            free_energy_before: Some(before),
            free_energy_after: Some(after),
        })
    }

    fn mean_free_energy(&self, init: &NetworkState, targets: &[f64], mask: &[bool], noise: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for n in noise {
            let r = rollout_posterior_with_noise(&self.window, &self.params, &self.config, init, n)?;
            total += free_energy(&r, targets, mask, &self.config)?.total;
        }
        Ok(total / noise.len() as f64)
    }
}

/// Extends `window` by step `t_new`. The new posterior starts equal to the
/// current prior `(mu_p, sigma_p)`, or at `N(0, I)` with `zero_init`.
pub fn bootstrap_window(
    window: &AdaptationSequence,
    t_new: usize,
    mu_p: &[f64],
    sigma_p: &[f64],
    zero_init: bool,
) -> AdaptationSequence {
    debug_assert!(window.is_empty() || window.end() + 1 == t_new);
    let mut out = window.clone();
    if out.is_empty() {
        out.start = t_new;
    }
    if zero_init {
        let zt = out.z_total();
        out.push_step(&vec![0.0; zt], &vec![0.0; zt]);
    } else {
        let a_mu: Vec<f64> = mu_p.iter().map(|m| m.clamp(-ATANH_LIMIT, ATANH_LIMIT).atanh()).collect();
        let a_sigma: Vec<f64> = sigma_p.iter().map(|s| s.ln()).collect();
        out.push_step(&a_mu, &a_sigma);
    }
    out
}

/// Counterpart's emission as seen by an agent: mirrored hand positions, normalized.
pub fn observe_counterpart(emitted: &Joints) -> Hands {
    normalize_extero(&mirror(&exteroception(emitted)))
}

/// Advances both agents by one lockstep step.
pub fn interaction_step(
    agents: &mut [AgentRuntime; 2],
    t: usize,
    config: &InteractionConfig,
) -> Result<[AgentStep; 2]> {
    let out0 = agents[0].predict(t)?;
    let out1 = agents[1].predict(t)?;
    let obs0 = observe_counterpart(&proprio_from_output(&out1));
    let obs1 = observe_counterpart(&proprio_from_output(&out0));
    let s0 = agents[0].observe(obs0, config)?;
    let s1 = agents[1].observe(obs1, config)?;
    Ok([s0, s1])
}

/// Runs `config.steps` lockstep steps.
pub fn run_interaction(agents: &mut [AgentRuntime; 2], config: &InteractionConfig) -> Result<InteractionTrace> {
    config.validate()?;
    if agents[0].config.output_dims != agents[1].config.output_dims {
        return Err(Error::Config("agents disagree on output dimensions".into()));
    }
    let mut trace = InteractionTrace::default();
    let first = agents[0].current_step() + 1;
    for t in first..first + config.steps {
        let [a, b] = interaction_step(agents, t, config)?;
        trace.agents[0].push(a);
        trace.agents[1].push(b);
    }
    Ok(trace)
}

/// Builds both agents from checkpoints with the configured seeds and runs the dyad.
pub fn run_dyad(a: &TrainState, b: &TrainState, config: &InteractionConfig) -> Result<InteractionTrace> {
    let mut agents =
        [AgentRuntime::from_checkpoint(a, config.seeds[0])?, AgentRuntime::from_checkpoint(b, config.seeds[1])?];
    run_interaction(&mut agents, config)
}
