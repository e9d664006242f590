//! Full-batch training of the network parameters and every sample's
//! adaptation variables by BPTT and Adam, plus checkpoint persistence.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PfsmSpec};
use crate::error::{Error, Result};
use crate::model::{
    backward_acc, draw_noise, free_energy, rollout_posterior_with_noise, AdaptationSequence, ModelConfig,
    NetworkParams, NetworkState,
};
use crate::optim::{AdamConfig, AdamMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Bottom-layer meta-priors of a sweep.
    pub w_values: Vec<f64>,
    pub seeds: Vec<u64>,
}

pub const DESK_EPOCHS: usize = 5_000;
pub const FULL_EPOCHS: usize = 80_000;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DESK_EPOCHS,
            adam: AdamConfig::default(),
            w_values: vec![0.0, 0.005, 0.01, 1.0, 2.0, 3.4, 5.0],
            seeds: vec![1, 2, 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate >= 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be a finite non-negative number".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-sample averages recorded after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub accuracy: f64,
    pub complexity: f64,
    /// Time-averaged unweighted KL per layer.
    pub kl: Vec<f64>,
}

/// Identifies the data a network was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: PfsmSpec,
    pub seed: u64,
    pub n_samples: usize,
    pub length: usize,
}

impl DatasetInfo {
    pub fn of(ds: &Dataset) -> Self {
        Self { spec: ds.spec, seed: ds.seed, n_samples: ds.samples.len(), length: ds.length }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetInfo,
    pub params: NetworkParams,
    /// One full-length adaptation sequence per training sample.
    pub adaptation: Vec<AdaptationSequence>,
    pub param_moments: AdamMoments,
    pub adaptation_moments: Vec<AdamMoments>,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Normalized per-sample targets of a dataset, `T × 10` each.
pub fn dataset_targets(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.samples.iter().map(|s| s.network_targets()).collect()
}

/// Fresh state: seeded fan-in initialization, zero adaptation variables
/// (so every posterior starts at `N(0, I)`), zero optimizer moments.
pub fn init_train(dataset: &Dataset, model: &ModelConfig, train: &TrainConfig) -> Result<TrainState> {
    model.validate()?;
    train.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    if dataset.samples.iter().any(|s| s.is_empty()) {
        return Err(Error::Usage("dataset contains an empty sequence".into()));
    }
    if model.output_dims != crate::dataset::OUTPUT_DIMS {
        return Err(Error::Config(format!(
            "model output_dims {} does not match the dataset's {} target dims",
            model.output_dims,
            crate::dataset::OUTPUT_DIMS
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let params = NetworkParams::init(model, &mut rng);
    let adaptation: Vec<AdaptationSequence> =
        dataset.samples.iter().map(|s| AdaptationSequence::zeros(model, 1, s.len())).collect();
    let adaptation_moments = adaptation.iter().map(|a| AdamMoments::new(2 * a.a_mu.len())).collect();
    Ok(TrainState {
        model: model.clone(),
        train: train.clone(),
        dataset: DatasetInfo::of(dataset),
        param_moments: AdamMoments::new(params.num_values()),
        params,
        adaptation,
        adaptation_moments,
        epoch: 0,
        history: Vec::new(),
    })
}

/// Noise generator for one epoch, derived from the model seed and the epoch
/// index so that a resumed run draws exactly the same noise.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Forward over every sample, backward, then one Adam update of the
/// parameters and all adaptation variables.
pub fn train_epoch(state: &mut TrainState, targets: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<EpochStats> {
    if targets.len() != state.adaptation.len() {
        return Err(Error::Usage(format!(
            "{} target sequences for {} adaptation sequences",
            targets.len(),
            state.adaptation.len()
        )));
    }
    let config = &state.model;
    let layout = config.layout();
    let init = NetworkState::initial(&layout);
    let mask = vec![true; config.output_dims];
    let mut grads = NetworkParams::zeros(config);
    let n = targets.len() as f64;
    let mut stats = EpochStats {
        epoch: state.epoch + 1,
        total: 0.0,
        accuracy: 0.0,
        complexity: 0.0,
        kl: vec![0.0; config.num_layers()],
    };
    for (s, target) in targets.iter().enumerate() {
        let a = &state.adaptation[s];
        let noise = draw_noise(&layout, a.len(), rng);
        let rollout = rollout_posterior_with_noise(a, &state.params, config, &init, &noise)?;
        let report = free_energy(&rollout, target, &mask, config)?;
        if !report.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite free energy at epoch {} on sample {s} (accuracy {}, complexity {})",
                state.epoch + 1,
                report.accuracy,
                report.complexity
            )));
        }
        stats.total += report.total / n;
        stats.accuracy += report.accuracy / n;
        stats.complexity += report.complexity / n;
        for (k, v) in stats.kl.iter_mut().zip(&report.e_z_mean) {
            *k += v / n;
        }
        let mut g_mu = vec![0.0; a.a_mu.len()];
        let mut g_sigma = vec![0.0; a.a_sigma.len()];
        backward_acc(&rollout, target, &mask, &state.params, config, Some(&mut grads), &mut g_mu, &mut g_sigma)?;
        let a = &mut state.adaptation[s];
        state.adaptation_moments[s].update(
            [a.a_mu.as_mut_slice(), a.a_sigma.as_mut_slice()],
            &[&g_mu, &g_sigma],
            &state.train.adam,
        );
    }
    let grad_slices = grads.slices();
    if grad_slices.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical(format!("non-finite parameter gradient at epoch {}", state.epoch + 1)));
    }
    state.param_moments.update(state.params.slices_mut(), &grad_slices, &state.train.adam);
    state.epoch += 1;
    state.history.push(stats.clone());
    Ok(stats)
}

/// Trains until `state.epoch == until`, calling `progress` after each epoch.
pub fn train_until(
    state: &mut TrainState,
    targets: &[Vec<f64>],
    until: usize,
    mut progress: impl FnMut(&EpochStats),
) -> Result<()> {
    while state.epoch < until {
        let mut rng = epoch_rng(state.model.seed, state.epoch);
        let stats = train_epoch(state, targets, &mut rng)?;
        progress(&stats);
    }
    Ok(())
}

pub const CHECKPOINT_FORMAT: &str = "pvrnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    state: TrainState,
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        format: &'a str,
        version: u32,
        state: &'a TrainState,
    }
    let text = serde_json::to_string(&Borrowed { format: CHECKPOINT_FORMAT, version: CHECKPOINT_VERSION, state })?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: corrupt checkpoint: {e}", path.display())))?;
    let format = value.get("format").and_then(|v| v.as_str());
    let version = value.get("version").and_then(|v| v.as_u64());
    if format != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint version {:?} is not supported (expected {CHECKPOINT_VERSION})",
            path.display(),
            version
        )));
    }
    let file: CheckpointFile = serde_json::from_value(value)
        .map_err(|e| Error::Checkpoint(format!("{}: corrupt checkpoint: {e}", path.display())))?;
    let state = file.state;
    state.model.validate()?;
    state.params.check_shapes(&state.model).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let layout = state.model.layout();
    if state.adaptation.iter().any(|a| !a.matches_layout(&layout)) {
        return Err(Error::Checkpoint(format!("{}: adaptation variables do not match the model", path.display())));
    }
    Ok(state)
}

/// Loads a checkpoint and rejects it unless its architecture matches `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    if !state.model.same_architecture(expected) {
        return Err(Error::Checkpoint(format!("{}: model config does not match the expected one", path.display())));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, PrimitiveLabel, SequenceSample, DATASET_FORMAT};
    use crate::model::LayerConfig;

    fn small_model(seed: u64) -> ModelConfig {
        ModelConfig {
            layers: vec![
                LayerConfig { d_size: 8, z_size: 2, tau: 2.0, w: 0.1 },
                LayerConfig { d_size: 4, z_size: 1, tau: 4.0, w: 1.0 },
            ],
            w_first: 1.0,
            output_dims: 10,
            seed,
        }
    }

    fn small_dataset() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        build_dataset(&PfsmSpec::c_preferring(), 3, 60, 4, &mut rng).unwrap()
    }

    #[test]
    fn init_is_seeded_and_starts_at_standard_posterior() {
        let ds = small_dataset();
        let a = init_train(&ds, &small_model(9), &TrainConfig::default()).unwrap();
        let b = init_train(&ds, &small_model(9), &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.adaptation.iter().all(|s| s.a_mu.iter().chain(&s.a_sigma).all(|v| *v == 0.0)));
        let mut empty = ds.clone();
        empty.samples.clear();
        assert!(init_train(&empty, &small_model(9), &TrainConfig::default()).is_err());
    }

    #[test]
    fn zero_learning_rate_only_appends_history() {
        let ds = small_dataset();
        let mut tc = TrainConfig::default();
        tc.adam.learning_rate = 0.0;
        let mut state = init_train(&ds, &small_model(1), &tc).unwrap();
        let before = state.clone();
        let targets = dataset_targets(&ds);
        train_until(&mut state, &targets, 3, |_| {}).unwrap();
        assert!(state.params.bitwise_eq(&before.params));
        assert_eq!(state.adaptation, before.adaptation);
        assert_eq!(state.history.len(), 3);
        assert!(state.history.iter().all(|h| h.total.is_finite()));
    }

    #[test]
    fn loss_decreases_on_a_constant_sequence() {
        let proprio = vec![[20.0, -10.0, 15.0, 20.0, -10.0, 15.0]; 40];
        let sample = SequenceSample {
            extero: proprio.iter().map(crate::dataset::exteroception).collect(),
            labels: vec![PrimitiveLabel::A; 40],
            proprio,
        };
        let ds = Dataset {
            format: DATASET_FORMAT.into(),
            version: 1,
            spec: PfsmSpec::c_preferring(),
            seed: 0,
            length: 40,
            proprio_columns: vec![],
            extero_columns: vec![],
            samples: vec![sample],
        };
        let mut tc = TrainConfig::default();
        tc.adam.learning_rate = 0.01;
        let mut state = init_train(&ds, &small_model(2), &tc).unwrap();
        let targets = dataset_targets(&ds);
        train_until(&mut state, &targets, 50, |_| {}).unwrap();
        let totals: Vec<f64> = state.history.iter().map(|s| s.total).collect();
        // 5-epoch block means must not rise by more than two standard errors
        // of the single-sample Monte Carlo estimate.
        let blocks: Vec<(f64, f64)> = totals
            .chunks(5)
            .map(|c| {
                let m = c.iter().sum::<f64>() / 5.0;
                let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
                (m, (var / 5.0).sqrt())
            })
            .collect();
        for w in blocks.windows(2) {
            let tol = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
            assert!(w[1].0 <= w[0].0 + tol, "block mean rose: {:?} -> {:?} in {totals:?}", w[0], w[1]);
        }
        assert!(blocks.last().unwrap().0 < 0.5 * blocks[0].0);
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let ds = small_dataset();
        let targets = dataset_targets(&ds);
        let mut tc = TrainConfig::default();
        tc.adam.learning_rate = 0.005;
        let mut straight = init_train(&ds, &small_model(3), &tc).unwrap();
        train_until(&mut straight, &targets, 6, |_| {}).unwrap();

        let mut first = init_train(&ds, &small_model(3), &tc).unwrap();
        train_until(&mut first, &targets, 3, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&first, &path).unwrap();
        let mut resumed = load_checkpoint(&path).unwrap();
        assert_eq!(resumed, first);
        train_until(&mut resumed, &targets, 6, |_| {}).unwrap();
        assert_eq!(resumed.history, straight.history);
        assert!(resumed.params.bitwise_eq(&straight.params));

        assert!(load_checkpoint_expecting(&path, &small_model(3)).is_ok());
        let mut other = small_model(3);
        other.layers[0].d_size = 9;
        assert!(matches!(load_checkpoint_expecting(&path, &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_and_wrong_version_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, r#"{"format":"pvrnn-checkpoint","version":99,"state":{}}"#).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
