//! Pipeline stages. Each writes self-describing artifacts and skips work
//! whose output already exists unless forced.

use std::fs;
use std::io::Write;
use std::path::Path;

use pvrnn::analysis::prior_regeneration;
use pvrnn::dataset::{build_dataset, Dataset, PfsmSpec};
use pvrnn::interaction::{run_dyad, InteractionConfig};
use pvrnn::model::ModelConfig;
use pvrnn::optim::AdamConfig;
use pvrnn::training::{
    dataset_targets, epoch_rng, init_train, load_checkpoint, save_checkpoint, train_epoch, EpochStats, TrainConfig,
    TrainState,
};
use pvrnn::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::artifacts::{
    self, AgentInfo, CheckpointKey, InteractionArtifact, RegenArtifact, RegenConfig, ARTIFACT_VERSION,
    INTERACTION_FORMAT, REGEN_FORMAT,
};
use crate::plan::{ExperimentPlan, Stage};

/// Whether a stage produced its output or found it already present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Written,
    Skipped,
}

fn skip(path: &Path, force: bool) -> bool {
    !force && path.exists()
}

pub fn gen_data(
    spec: &PfsmSpec,
    samples: usize,
    length: usize,
    seed: u64,
    path: &Path,
    force: bool,
) -> Result<Outcome> {
    if skip(path, force) {
        return Ok(Outcome::Skipped);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = build_dataset(spec, samples, length, seed, &mut rng)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    ds.save(path)?;
    Ok(Outcome::Written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainJob {
    pub w: f64,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Intermediate checkpoint interval in epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Progress line interval on stderr; 0 disables.
    pub log_every: usize,
}

fn format_stats(s: &EpochStats) -> String {
    let kl: Vec<String> = s.kl.iter().map(|k| format!("{k:e}")).collect();
    format!(
        "epoch={} total={:e} accuracy={:e} complexity={:e} kl={}",
        s.epoch,
        s.total,
        s.accuracy,
        s.complexity,
        kl.join(",")
    )
}

/// Trains one network. An existing checkpoint with the same configuration
/// is resumed (or skipped when complete); a different one needs `force`.
pub fn train(dataset_path: &Path, job: &TrainJob, checkpoint: &Path, log: &Path, force: bool) -> Result<Outcome> {
    let dataset = Dataset::load(dataset_path)?;
    let model = ModelConfig::standard(job.w, job.seed);
    let train_cfg = TrainConfig {
        epochs: job.epochs,
        adam: AdamConfig { learning_rate: job.learning_rate, ..AdamConfig::default() },
        w_values: vec![job.w],
        seeds: vec![job.seed],
    };
    let fresh = || init_train(&dataset, &model, &train_cfg);
    let mut state = if checkpoint.exists() && !force {
        let st = load_checkpoint(checkpoint)?;
        let same =
            st.model == model && st.train == train_cfg && st.dataset == pvrnn::training::DatasetInfo::of(&dataset);
        if !same {
            return Err(Error::Config(format!(
                "{} was trained with a different configuration; pass --force to retrain",
                checkpoint.display()
            )));
        }
        if st.epoch >= job.epochs {
            return Ok(Outcome::Skipped);
        }
        st
    } else {
        fresh()?
    };
    let targets = dataset_targets(&dataset);
    while state.epoch < job.epochs {
        let mut rng = epoch_rng(state.model.seed, state.epoch);
        let stats = train_epoch(&mut state, &targets, &mut rng)?;
        if job.log_every > 0 && (stats.epoch % job.log_every == 0 || stats.epoch == job.epochs) {
            eprintln!(
                "[{}] {}",
                checkpoint.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned()),
                format_stats(&stats)
            );
        }
        if job.checkpoint_every > 0 && state.epoch % job.checkpoint_every == 0 && state.epoch < job.epochs {
            save_checkpoint(&state, checkpoint)?;
        }
    }
    save_checkpoint(&state, checkpoint)?;
    write_train_log(&state, log)?;
    Ok(Outcome::Written)
}

fn write_train_log(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in &state.history {
        writeln!(f, "{}", format_stats(s))?;
    }
    f.flush()?;
    Ok(())
}

/// Regenerates from the prior of a trained network, seeding each repeat with
/// the stored first two posterior steps of one training sample. `sample`
/// defaults to one drawn with the regeneration seed.
pub fn regen(
    checkpoint: &Path,
    key: Option<CheckpointKey>,
    config: &RegenConfig,
    sample: Option<usize>,
    path: &Path,
    force: bool,
) -> Result<Outcome> {
    if skip(path, force) {
        return Ok(Outcome::Skipped);
    }
    let state = load_checkpoint(checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sample = match sample {
        Some(s) if s < state.adaptation.len() => s,
        Some(s) => {
            return Err(Error::Usage(format!(
                "sample {s} out of range: checkpoint has {} samples",
                state.adaptation.len()
            )))
        }
        None if state.adaptation.is_empty() => {
            return Err(Error::Checkpoint("checkpoint has no stored adaptation".into()))
        }
        None => rng.random_range(0..state.adaptation.len()),
    };
    let regenerations = prior_regeneration(
        &state.params,
        &state.model,
        &state.adaptation[sample],
        config.repeats,
        config.horizon,
        &mut rng,
        config.deterministic,
    )?;
    let artifact = RegenArtifact {
        format: REGEN_FORMAT.into(),
        version: ARTIFACT_VERSION,
        checkpoint: checkpoint.display().to_string(),
        key,
        model: state.model.clone(),
        spec: state.dataset.spec,
        config: config.clone(),
        sample,
        regenerations,
    };
    artifacts::write_json(path, &artifact)?;
    Ok(Outcome::Written)
}

/// Runs one dyad between two checkpoints.
pub fn interact(
    experiment: &str,
    run: usize,
    checkpoints: [&Path; 2],
    keys: [Option<CheckpointKey>; 2],
    config: &InteractionConfig,
    path: &Path,
    force: bool,
) -> Result<Outcome> {
    if skip(path, force) {
        return Ok(Outcome::Skipped);
    }
    let a = load_checkpoint(checkpoints[0])?;
    let b = load_checkpoint(checkpoints[1])?;
    let trace = run_dyad(&a, &b, config)?;
    let [ka, kb] = keys;
    let info = |st: &TrainState, path: &Path, key: Option<CheckpointKey>| AgentInfo {
        checkpoint: path.display().to_string(),
        key,
        model: st.model.clone(),
        spec: st.dataset.spec,
    };
    let artifact = InteractionArtifact {
        format: INTERACTION_FORMAT.into(),
        version: ARTIFACT_VERSION,
        experiment: experiment.into(),
        run,
        agents: [info(&a, checkpoints[0], ka), info(&b, checkpoints[1], kb)],
        config: config.clone(),
        trace,
    };
    artifacts::write_json(path, &artifact)?;
    Ok(Outcome::Written)
}

/// Stable 64-bit hash of a name, used to derive per-artifact seeds.
pub fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn regen_seed(plan_seed: u64, key: &CheckpointKey) -> u64 {
    artifacts::derive_seed(plan_seed, &[3, name_hash(&key.file_stem())])
}

pub fn interaction_seeds(plan_seed: u64, experiment: &str, run: usize) -> [u64; 2] {
    let base = [4, name_hash(experiment), run as u64];
    [
        artifacts::derive_seed(plan_seed, &[base[0], base[1], base[2], 0]),
        artifacts::derive_seed(plan_seed, &[base[0], base[1], base[2], 1]),
    ]
}

/// Summary line per executed stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub stage: Stage,
    pub written: usize,
    pub skipped: usize,
}

fn tally(stage: Stage, outcomes: &[Outcome]) -> StageLog {
    let written = outcomes.iter().filter(|o| **o == Outcome::Written).count();
    StageLog { stage, written, skipped: outcomes.len() - written }
}

/// Executes every stage of the plan in order; the first failure halts it.
pub fn run_plan(plan: &ExperimentPlan, out: &Path, force: bool, log_every: usize) -> Result<Vec<StageLog>> {
    plan.validate(out)?;
    let mut logs = Vec::new();
    for stage in plan.resolved_stages() {
        let outcomes: Vec<Outcome> = match stage {
            Stage::GenData => plan
                .datasets
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let path = artifacts::dataset_path(out, &d.name);
                    gen_data(&d.spec()?, d.samples, d.length, plan.dataset_seed(i), &path, force)
                })
                .collect::<Result<_>>()?,
            Stage::Train => plan
                .train_cells()
                .par_iter()
                .map(|(key, block)| {
                    let job = TrainJob {
                        w: key.w,
                        seed: key.seed,
                        epochs: block.epochs,
                        learning_rate: block.learning_rate,
                        checkpoint_every: block.checkpoint_every,
                        log_every,
                    };
                    train(
                        &artifacts::dataset_path(out, &key.dataset),
                        &job,
                        &artifacts::checkpoint_path(out, key),
                        &artifacts::train_log_path(out, key),
                        force,
                    )
                })
                .collect::<Result<_>>()?,
            Stage::Regen => {
                let block = plan.regen.clone().unwrap_or_default();
                plan.train_cells()
                    .par_iter()
                    .map(|(key, _)| {
                        let cfg = RegenConfig {
                            repeats: block.repeats,
                            horizon: block.horizon,
                            seed: regen_seed(plan.seed, key),
                            deterministic: false,
                        };
                        regen(
                            &artifacts::checkpoint_path(out, key),
                            Some(key.clone()),
                            &cfg,
                            None,
                            &artifacts::regen_path(out, key),
                            force,
                        )
                    })
                    .collect::<Result<_>>()?
            }
            Stage::Interact => {
                let mut jobs = Vec::new();
                for x in &plan.interact {
                    let seeds_a = plan.agent_seeds(&x.a);
                    let seeds_b = plan.agent_seeds(&x.b);
                    for run in 0..x.runs {
                        let ka = CheckpointKey {
                            dataset: x.a.dataset.clone(),
                            w: x.a.w,
                            seed: seeds_a[run % seeds_a.len()],
                        };
                        let kb = CheckpointKey {
                            dataset: x.b.dataset.clone(),
                            w: x.b.w,
                            seed: seeds_b[run % seeds_b.len()],
                        };
                        let cfg = InteractionConfig {
                            window: x.window,
                            epochs: x.epochs,
                            steps: x.steps,
                            learning_rate: x.learning_rate,
                            seeds: interaction_seeds(plan.seed, &x.name, run),
                            zero_init: x.zero_init,
                        };
                        jobs.push((x.name.clone(), run, ka, kb, cfg));
                    }
                }
                jobs.par_iter()
                    .map(|(name, run, ka, kb, cfg)| {
                        let pa = artifacts::checkpoint_path(out, ka);
                        let pb = artifacts::checkpoint_path(out, kb);
                        interact(
                            name,
                            *run,
                            [&pa, &pb],
                            [Some(ka.clone()), Some(kb.clone())],
                            cfg,
                            &artifacts::interaction_path(out, name, *run),
                            force,
                        )
                    })
                    .collect::<Result<_>>()?
            }
            Stage::Analyze => {
                let seed = plan.analyze.as_ref().and_then(|a| a.esn_seed).unwrap_or(plan.seed);
                vec![crate::analyze::analyze(out, seed, force)?]
            }
            Stage::Report => vec![crate::report::report(out, force)?.0],
        };
        logs.push(tally(stage, &outcomes));
    }
    Ok(logs)
}
