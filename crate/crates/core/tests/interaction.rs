use pvrnn::dataset::{build_dataset, PfsmSpec};
use pvrnn::interaction::{
    bootstrap_window, interaction_step, observe_counterpart, run_dyad, run_interaction, AgentRuntime, InteractionConfig,
};
use pvrnn::model::{kl_gauss, AdaptationSequence, LatentGaussian, ModelConfig};
use pvrnn::training::{dataset_targets, init_train, train_until, TrainConfig, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained(w: f64, seed: u64) -> TrainState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = build_dataset(&PfsmSpec::c_preferring(), 2, 80, seed, &mut rng).unwrap();
    let tc = TrainConfig { epochs: 20, ..TrainConfig::default() };
    let mut st = init_train(&ds, &ModelConfig::standard(w, seed), &tc).unwrap();
    train_until(&mut st, &dataset_targets(&ds), 20, |_| {}).unwrap();
    st
}

fn quick(steps: usize) -> InteractionConfig {
    InteractionConfig { window: 5, epochs: 8, steps, seeds: [3, 3], ..InteractionConfig::default() }
}

#[test]
fn window_arithmetic() {
    let cfg = InteractionConfig::default();
    assert_eq!(cfg.window_start(50), 1);
    assert_eq!(cfg.window_start(70), 1);
    assert_eq!(cfg.window_start(71), 2);
    assert_eq!(cfg.window_start(100), 31);
}

#[test]
fn sliding_window_keeps_its_size() {
    let st = trained(1.0, 1);
    let mut agents = [AgentRuntime::from_checkpoint(&st, 1).unwrap(), AgentRuntime::from_checkpoint(&st, 2).unwrap()];
    let cfg = quick(12);
    run_interaction(&mut agents, &cfg).unwrap();
    for a in &agents {
        assert_eq!(a.window.start, 8);
        assert_eq!(a.window.end(), 12);
        assert_eq!(a.current_step(), 12);
    }
}

#[test]
fn identical_agents_give_a_symmetric_trace() {
    let st = trained(1.0, 2);
    let trace = run_dyad(&st, &st, &quick(10)).unwrap();
    assert_eq!(trace.agents[0], trace.agents[1]);
}

#[test]
fn parameters_stay_frozen() {
    let a = trained(0.005, 3);
    let b = trained(3.4, 4);
    let mut agents = [AgentRuntime::from_checkpoint(&a, 1).unwrap(), AgentRuntime::from_checkpoint(&b, 2).unwrap()];
    run_interaction(&mut agents, &quick(8)).unwrap();
    assert!(agents[0].params.bitwise_eq(&a.params));
    assert!(agents[1].params.bitwise_eq(&b.params));
}

#[test]
fn observations_come_from_the_counterpart() {
    let a = trained(0.005, 3);
    let b = trained(3.4, 4);
    let cfg = InteractionConfig { seeds: [1, 2], ..quick(8) };
    let trace = run_dyad(&a, &b, &cfg).unwrap();
    for k in 0..trace.len() {
        assert_eq!(trace.agents[0][k].observed_extero, observe_counterpart(&trace.agents[1][k].emitted));
        assert_eq!(trace.agents[1][k].observed_extero, observe_counterpart(&trace.agents[0][k].emitted));
        assert_eq!(trace.agents[0][k].t, k + 1);
    }
}

#[test]
fn inference_does_not_raise_windowed_free_energy() {
    let a = trained(0.005, 5);
    let b = trained(1.0, 6);
    let cfg = InteractionConfig { window: 10, epochs: 60, steps: 16, seeds: [1, 2], ..InteractionConfig::default() };
    let trace = run_dyad(&a, &b, &cfg).unwrap();
    for agent in &trace.agents {
        for s in agent.iter().filter(|s| s.free_energy_after.is_some()) {
            let (before, after) = (s.free_energy_before.unwrap(), s.free_energy_after.unwrap());
            assert!(after <= before, "step {}: {before} -> {after}", s.t);
        }
    }
}

#[test]
fn zero_steps_change_nothing() {
    let st = trained(1.0, 7);
    let mut agents = [AgentRuntime::from_checkpoint(&st, 1).unwrap(), AgentRuntime::from_checkpoint(&st, 2).unwrap()];
    let trace = run_interaction(&mut agents, &quick(0)).unwrap();
    assert!(trace.is_empty());
    assert_eq!(agents[0].current_step(), 0);
    assert!(agents[0].window.is_empty());
}

#[test]
fn runs_are_reproducible() {
    let a = trained(0.005, 8);
    let b = trained(3.4, 9);
    let cfg = InteractionConfig { seeds: [5, 6], ..quick(8) };
    assert_eq!(run_dyad(&a, &b, &cfg).unwrap(), run_dyad(&a, &b, &cfg).unwrap());
}

#[test]
fn new_step_starts_at_the_prior() {
    let cfg = ModelConfig::standard(1.0, 1);
    let window = AdaptationSequence::zeros(&cfg, 4, 3);
    let mu_p = [0.3, -0.9, 0.0, 0.99, 0.5, -0.2, 0.1];
    let sigma_p = [0.5, 1.0, 2.0, 0.01, 0.7, 1.3, 0.2];
    let ext = bootstrap_window(&window, 7, &mu_p, &sigma_p, false);
    assert_eq!(ext.end(), 7);
    let (mut from, mut kl) = (0, 0.0);
    for l in 0..3 {
        let n = cfg.layers[l].z_size;
        let prior = LatentGaussian { mu: mu_p[from..from + n].to_vec(), sigma: sigma_p[from..from + n].to_vec() };
        kl += kl_gauss(&ext.posterior(7, l).unwrap(), &prior).unwrap();
        from += n;
    }
    assert!(kl.abs() < 1e-9, "initial KL {kl}");

    let zero = bootstrap_window(&window, 7, &mu_p, &sigma_p, true);
    for l in 0..3 {
        let q = zero.posterior(7, l).unwrap();
        assert!(q.mu.iter().all(|m| *m == 0.0) && q.sigma.iter().all(|s| *s == 1.0));
    }
}

#[test]
fn misuse_is_reported() {
    let st = trained(1.0, 10);
    let mut agent = AgentRuntime::from_checkpoint(&st, 1).unwrap();
    assert!(agent.observe([0.0; 4], &quick(1)).is_err());
    assert!(agent.predict(2).is_err());
    let bad = InteractionConfig { window: 0, ..quick(1) };
    let mut agents = [agent.clone(), agent];
    assert!(run_interaction(&mut agents, &bad).is_err());
    assert!(interaction_step(&mut agents, 5, &quick(1)).is_err());
}
