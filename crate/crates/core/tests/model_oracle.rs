mod common;

use common::oracle;
use pvrnn::model::{
    backward, cell_update, free_energy, kl_gauss, output_map, prior_head, rollout_posterior,
    rollout_posterior_with_noise, AdaptationSequence, LatentGaussian, LayerConfig, LayerState, ModelConfig,
    NetworkParams, NetworkState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: vec![
            LayerConfig { d_size: 4, z_size: 1, tau: 2.0, w: 0.7 },
            LayerConfig { d_size: 2, z_size: 1, tau: 4.0, w: 2.0 },
        ],
        w_first: 1.0,
        output_dims: 3,
        seed: 0,
    }
}

struct Case {
    config: ModelConfig,
    params: NetworkParams,
    a: AdaptationSequence,
    noise: Vec<f64>,
    targets: Vec<f64>,
    mask: Vec<bool>,
}

fn random_case(config: ModelConfig, steps: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::init(&config, &mut rng);
    for b in &mut params.b_out {
        *b = rng.random_range(-0.5..0.5);
    }
    let mut a = AdaptationSequence::zeros(&config, 1, steps);
    for v in &mut a.a_mu {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in &mut a.a_sigma {
        *v = rng.random_range(-1.5..0.5);
    }
    let lay = config.layout();
    let noise: Vec<f64> = (0..steps * lay.z_total).map(|_| StandardNormal.sample(&mut rng)).collect();
    let targets: Vec<f64> = (0..steps * config.output_dims).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mask = vec![true; config.output_dims];
    Case { config, params, a, noise, targets, mask }
}

/// Re-indexes flat step-major buffers as `[step][layer][unit]`.
fn nest(config: &ModelConfig, flat: &[f64], steps: usize) -> Vec<Vec<Vec<f64>>> {
    let lay = config.layout();
    (0..steps)
        .map(|k| (0..lay.num_layers()).map(|l| lay.z_range(l).map(|i| flat[k * lay.z_total + i]).collect()).collect())
        .collect()
}

fn oracle_for(case: &Case, steps: usize) -> oracle::OracleTrace {
    let targets: Vec<Vec<f64>> = case.targets.chunks(case.config.output_dims).map(|c| c.to_vec()).collect();
    oracle::posterior_rollout(
        &case.config,
        &case.params,
        &nest(&case.config, &case.a.a_mu, steps),
        &nest(&case.config, &case.a.a_sigma, steps),
        &nest(&case.config, &case.noise, steps),
        &targets,
        &case.mask,
    )
}

#[test]
fn three_layer_rollout_matches_straight_line_oracle() {
    let case = random_case(ModelConfig::standard(0.3, 0), 5, 42);
    let lay = case.config.layout();
    let r =
        rollout_posterior_with_noise(&case.a, &case.params, &case.config, &NetworkState::initial(&lay), &case.noise)
            .unwrap();
    let o = oracle_for(&case, 5);
    for k in 0..5 {
        for l in 0..3 {
            for (i, j) in lay.d_range(l).enumerate() {
                assert!((r.h[k * lay.d_total + j] - o.h[k][l][i]).abs() < 1e-12);
            }
            for (i, v) in r.prior_mu(k + 1, l).iter().enumerate() {
                assert!((v - o.mu_p[k][l][i]).abs() < 1e-12);
            }
            for (i, v) in r.prior_sigma(k + 1, l).iter().enumerate() {
                assert!((v - o.sigma_p[k][l][i]).abs() < 1e-12);
            }
        }
        for (a, b) in r.output(k + 1).iter().zip(&o.outputs[k]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let fe = free_energy(&r, &case.targets, &case.mask, &case.config).unwrap();
    assert!((fe.total - o.total).abs() < 1e-10);
    assert!((fe.accuracy - o.accuracy).abs() < 1e-10);
}

#[test]
fn cell_and_prior_head_match_oracle_on_random_inputs() {
    let config = ModelConfig::standard(1.0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = NetworkParams::init(&config, &mut rng);
    let lay = config.layout();
    let prev: Vec<LayerState> = (0..3)
        .map(|l| {
            let h: Vec<f64> = (0..lay.d_sizes[l]).map(|_| rng.random_range(-2.0..2.0)).collect();
            LayerState { d: h.iter().map(|x| x.tanh()).collect(), h, z: vec![] }
        })
        .collect();
    let z: Vec<Vec<f64>> = (0..3).map(|l| (0..lay.z_sizes[l]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let next = cell_update(&prev, &z, &params, &config).unwrap();
    for l in 0..3 {
        let p = &params.layers[l];
        let mut sum = oracle::mv(&oracle::to_rows(&p.w_dd), &prev[l].d);
        let lat = oracle::mv(&oracle::to_rows(&p.w_zd), &z[l]);
        for i in 0..sum.len() {
            sum[i] += lat[i];
        }
        if let Some(w) = &p.w_top {
            let v = oracle::mv(&oracle::to_rows(w), &prev[l + 1].d);
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        if let Some(w) = &p.w_bottom {
            let v = oracle::mv(&oracle::to_rows(w), &prev[l - 1].d);
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        let tau = config.layers[l].tau;
        for i in 0..sum.len() {
            let expect = (1.0 - 1.0 / tau) * prev[l].h[i] + sum[i] / tau;
            assert!((next[l].h[i] - expect).abs() < 1e-12);
            assert_eq!(next[l].d[i], next[l].h[i].tanh());
        }
        let g = prior_head(Some(&prev[l].d), 3, l, &params, &config).unwrap();
        let mu = oracle::mv(&oracle::to_rows(&p.w_mu_p), &prev[l].d);
        let ls = oracle::mv(&oracle::to_rows(&p.w_sigma_p), &prev[l].d);
        for i in 0..g.dim() {
            assert!((g.mu[i] - mu[i].tanh()).abs() < 1e-12);
            assert!((g.sigma[i] - ls[i].exp()).abs() < 1e-12);
        }
    }
    let d1 = &next[0].d;
    let x = output_map(d1, &params).unwrap();
    let expect = oracle::mv(&oracle::to_rows(&params.w_out), d1);
    for i in 0..10 {
        assert!((x[i] - expect[i] - params.b_out[i]).abs() < 1e-12);
    }
}

#[test]
fn tiny_net_free_energy_matches_oracle() {
    let case = random_case(tiny_config(), 5, 3);
    let lay = case.config.layout();
    let r =
        rollout_posterior_with_noise(&case.a, &case.params, &case.config, &NetworkState::initial(&lay), &case.noise)
            .unwrap();
    let fe = free_energy(&r, &case.targets, &case.mask, &case.config).unwrap();
    let o = oracle_for(&case, 5);
    assert!((fe.total - o.total).abs() < 1e-10, "{} vs {}", fe.total, o.total);
    for k in 0..5 {
        for l in 0..2 {
            assert!((fe.complexity_per_layer[l][k] - o.kl[k][l]).abs() < 1e-12);
            assert!(fe.complexity_per_layer[l][k] >= 0.0);
        }
    }
}

fn total_of(case: &Case) -> f64 {
    let lay = case.config.layout();
    let r =
        rollout_posterior_with_noise(&case.a, &case.params, &case.config, &NetworkState::initial(&lay), &case.noise)
            .unwrap();
    free_energy(&r, &case.targets, &case.mask, &case.config).unwrap().total
}

#[test]
fn gradients_match_central_differences() {
    for seed in [1, 2, 3] {
        let mut case = random_case(tiny_config(), 5, seed);
        let lay = case.config.layout();
        let r = rollout_posterior_with_noise(
            &case.a,
            &case.params,
            &case.config,
            &NetworkState::initial(&lay),
            &case.noise,
        )
        .unwrap();
        let g = backward(&r, &case.targets, &case.mask, &case.params, &case.config).unwrap();
        let h = 1e-5;
        let analytic: Vec<f64> = g.params.slices().iter().flat_map(|s| s.iter().copied()).collect();
        let mut idx = 0;
        let n_slices = case.params.slices().len();
        for s in 0..n_slices {
            let len = case.params.slices()[s].len();
            for i in 0..len {
                let x0 = case.params.slices()[s][i];
                let num = oracle::central_diff(
                    |x| {
                        case.params.slices_mut()[s][i] = x;
                        total_of(&case)
                    },
                    x0,
                    h,
                );
                case.params.slices_mut()[s][i] = x0;
                assert!(
                    oracle::grad_close(analytic[idx], num, 1e-4, 1e-8),
                    "param slice {s} index {i}: analytic {} numeric {num}",
                    analytic[idx]
                );
                idx += 1;
            }
        }
        for i in 0..case.a.a_mu.len() {
            let x0 = case.a.a_mu[i];
            let num = oracle::central_diff(
                |x| {
                    case.a.a_mu[i] = x;
                    total_of(&case)
                },
                x0,
                h,
            );
            case.a.a_mu[i] = x0;
            assert!(oracle::grad_close(g.a_mu[i], num, 1e-4, 1e-8), "A_mu {i}: {} vs {num}", g.a_mu[i]);
            let x0 = case.a.a_sigma[i];
            let num = oracle::central_diff(
                |x| {
                    case.a.a_sigma[i] = x;
                    total_of(&case)
                },
                x0,
                h,
            );
            case.a.a_sigma[i] = x0;
            assert!(oracle::grad_close(g.a_sigma[i], num, 1e-4, 1e-8), "A_sigma {i}: {} vs {num}", g.a_sigma[i]);
        }
    }
}

#[test]
fn zero_network_gives_zero_readout_gradient() {
    let config = tiny_config();
    let params = NetworkParams::zeros(&config);
    let a = AdaptationSequence::zeros(&config, 1, 4);
    let lay = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = rollout_posterior(&a, &params, &config, &NetworkState::initial(&lay), &mut rng).unwrap();
    let targets = vec![0.0; 4 * 3];
    let g = backward(&r, &targets, &[true; 3], &params, &config).unwrap();
    assert!(g.params.w_out.data.iter().all(|v| *v == 0.0));
    assert!(g.params.b_out.iter().all(|v| *v == 0.0));
}

#[test]
fn kl_gradient_vanishes_when_posterior_equals_prior() {
    // Single step: the prior is N(0, I), A = 0 makes q = p, and a zero
    // readout removes the accuracy path.
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = NetworkParams::init(&config, &mut rng);
    params.w_out.fill(0.0);
    let mut case = Case {
        a: AdaptationSequence::zeros(&config, 1, 1),
        noise: vec![0.8, -0.3],
        targets: vec![0.1, 0.2, 0.3],
        mask: vec![true; 3],
        params,
        config,
    };
    let lay = case.config.layout();
    let r =
        rollout_posterior_with_noise(&case.a, &case.params, &case.config, &NetworkState::initial(&lay), &case.noise)
            .unwrap();
    let fe = free_energy(&r, &case.targets, &case.mask, &case.config).unwrap();
    assert_eq!(fe.complexity, 0.0);
    let g = backward(&r, &case.targets, &case.mask, &case.params, &case.config).unwrap();
    for i in 0..2 {
        let num = oracle::central_diff(
            |x| {
                case.a.a_sigma[i] = x;
                total_of(&case)
            },
            0.0,
            1e-5,
        );
        case.a.a_sigma[i] = 0.0;
        assert!(g.a_sigma[i].abs() < 1e-12);
        assert!(num.abs() < 1e-8);
    }
}

#[test]
fn zero_meta_prior_decouples_later_prior_heads() {
    let mut config = tiny_config();
    for l in &mut config.layers {
        l.w = 0.0;
    }
    let mut case = random_case(config, 5, 8);
    let base = total_of(&case);
    let lay = case.config.layout();
    let r =
        rollout_posterior_with_noise(&case.a, &case.params, &case.config, &NetworkState::initial(&lay), &case.noise)
            .unwrap();
    let g = backward(&r, &case.targets, &case.mask, &case.params, &case.config).unwrap();
    for l in &g.params.layers {
        assert!(l.w_mu_p.data.iter().chain(&l.w_sigma_p.data).all(|v| *v == 0.0));
    }
    for l in &mut case.params.layers {
        l.w_mu_p.fill(0.9);
        l.w_sigma_p.fill(-0.4);
    }
    assert_eq!(total_of(&case), base);
}

#[test]
fn scaling_meta_prior_scales_later_complexity_exactly() {
    let case = random_case(tiny_config(), 6, 12);
    let lay = case.config.layout();
    let eval = |config: &ModelConfig| {
        let r = rollout_posterior_with_noise(&case.a, &case.params, config, &NetworkState::initial(&lay), &case.noise)
            .unwrap();
        free_energy(&r, &case.targets, &case.mask, config).unwrap()
    };
    let base = eval(&case.config);
    let first: f64 = (0..2).map(|l| base.complexity_per_layer[l][0] / lay.z_sizes[l] as f64).sum();
    let mut scaled = case.config.clone();
    for l in &mut scaled.layers {
        l.w *= 3.0;
    }
    let s = eval(&scaled);
    assert_eq!(s.accuracy, base.accuracy);
    let lhs = s.complexity - first;
    let rhs = 3.0 * (base.complexity - first);
    assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
}

#[test]
fn kl_matches_numerical_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let (mq, mp) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (sq, sp) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let q = LatentGaussian { mu: vec![mq], sigma: vec![sq] };
        let p = LatentGaussian { mu: vec![mp], sigma: vec![sp] };
        let closed = kl_gauss(&q, &p).unwrap();
        let numeric = oracle::kl_numeric(mq, sq, mp, sp);
        assert!((closed - numeric).abs() < 1e-3, "{closed} vs {numeric}");
    }
}

#[test]
fn rollouts_are_deterministic_and_single_step_matches_cell() {
    let case = random_case(ModelConfig::standard(1.0, 0), 1, 21);
    let lay = case.config.layout();
    let init = NetworkState::initial(&lay);
    let a = rollout_posterior(&case.a, &case.params, &case.config, &init, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = rollout_posterior(&case.a, &case.params, &case.config, &init, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    let prev: Vec<LayerState> =
        (0..3).map(|l| LayerState { h: vec![0.0; lay.d_sizes[l]], d: vec![0.0; lay.d_sizes[l]], z: vec![] }).collect();
    let z: Vec<Vec<f64>> = (0..3).map(|l| a.z[lay.z_range(l)].to_vec()).collect();
    let next = cell_update(&prev, &z, &case.params, &case.config).unwrap();
    let x = output_map(&next[0].d, &case.params).unwrap();
    assert_eq!(x.as_slice(), a.output(1));
}
