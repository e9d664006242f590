//! Experiment plans: a TOML file naming datasets, training sweeps,
//! regeneration, dyad experiments, analysis and reporting.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pvrnn::dataset::PfsmSpec;
use pvrnn::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, CheckpointKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    Train,
    Regen,
    Interact,
    Analyze,
    Report,
}

impl Stage {
    pub const ORDER: [Stage; 6] =
        [Stage::GenData, Stage::Train, Stage::Regen, Stage::Interact, Stage::Analyze, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Regen => "regen",
            Stage::Interact => "interact",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub name: String,
    /// Probability of B after A.
    pub p_b: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_length")]
    pub length: usize,
    /// Defaults to a value derived from the plan seed and the block position.
    pub seed: Option<u64>,
}

impl DatasetBlock {
    pub fn spec(&self) -> Result<PfsmSpec> {
        PfsmSpec::new(self.p_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    /// Dataset names; empty means every dataset of the plan.
    #[serde(default)]
    pub datasets: Vec<String>,
    pub w: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_train_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegenBlock {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_length")]
    pub horizon: usize,
}

impl Default for RegenBlock {
    fn default() -> Self {
        Self { repeats: default_repeats(), horizon: default_length() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRef {
    pub dataset: String,
    pub w: f64,
    /// Network seeds cycled over runs; empty means the seeds of the covering train block.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractBlock {
    pub name: String,
    pub a: AgentRef,
    pub b: AgentRef,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_inference_epochs")]
    pub epochs: usize,
    #[serde(default = "default_inference_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub zero_init: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeBlock {
    /// Seed of the primitive classifier; defaults to the plan seed.
    pub esn_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBlock {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Stages to run, in dependency order; defaults to every configured stage.
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub datasets: Vec<DatasetBlock>,
    #[serde(default)]
    pub train: Vec<TrainBlock>,
    pub regen: Option<RegenBlock>,
    #[serde(default)]
    pub interact: Vec<InteractBlock>,
    pub analyze: Option<AnalyzeBlock>,
    pub report: Option<ReportBlock>,
}

fn default_samples() -> usize {
    20
}
fn default_length() -> usize {
    400
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_epochs() -> usize {
    pvrnn::training::DESK_EPOCHS
}
fn default_train_lr() -> f64 {
    0.001
}
fn default_checkpoint_every() -> usize {
    500
}
fn default_repeats() -> usize {
    20
}
fn default_runs() -> usize {
    5
}
fn default_steps() -> usize {
    200
}
fn default_window() -> usize {
    70
}
fn default_inference_epochs() -> usize {
    200
}
fn default_inference_lr() -> f64 {
    0.01
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("plan: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Stages to execute: the explicit list, or every stage with a config block.
    pub fn resolved_stages(&self) -> Vec<Stage> {
        if !self.stages.is_empty() {
            return self.stages.clone();
        }
        Stage::ORDER
            .into_iter()
            .filter(|s| match s {
                Stage::GenData => !self.datasets.is_empty(),
                Stage::Train => !self.train.is_empty(),
                Stage::Regen => self.regen.is_some(),
                Stage::Interact => !self.interact.is_empty(),
                Stage::Analyze => self.analyze.is_some(),
                Stage::Report => self.report.is_some(),
            })
            .collect()
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetBlock> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn dataset_seed(&self, index: usize) -> u64 {
        self.datasets[index].seed.unwrap_or_else(|| artifacts::derive_seed(self.seed, &[1, index as u64]))
    }

    /// Every `(dataset, w, seed)` cell of the training blocks, with its block.
    pub fn train_cells(&self) -> Vec<(CheckpointKey, &TrainBlock)> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for block in &self.train {
            let names: Vec<&str> = if block.datasets.is_empty() {
                self.datasets.iter().map(|d| d.name.as_str()).collect()
            } else {
                block.datasets.iter().map(String::as_str).collect()
            };
            for name in names {
                for &w in &block.w {
                    for &seed in &block.seeds {
                        let key = CheckpointKey { dataset: name.to_string(), w, seed };
                        if seen.insert(key.file_stem()) {
                            out.push((key, block));
                        }
                    }
                }
            }
        }
        out
    }

    /// Network seeds an agent reference cycles through.
    pub fn agent_seeds(&self, agent: &AgentRef) -> Vec<u64> {
        if !agent.seeds.is_empty() {
            return agent.seeds.clone();
        }
        let mut seeds: Vec<u64> = self
            .train_cells()
            .into_iter()
            .filter(|(k, _)| k.dataset == agent.dataset && k.w == agent.w)
            .map(|(k, _)| k.seed)
            .collect();
        seeds.dedup();
        seeds
    }

    /// Checks field values, stage order and that every reference resolves,
    /// either to another block of the plan or to an artifact in `out`.
    pub fn validate(&self, out: &Path) -> Result<()> {
        let stages = self.resolved_stages();
        for pair in stages.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config(format!(
                    "stages: `{}` cannot follow `{}`; stages run in the order gen-data, train, regen, interact, analyze, report",
                    pair[1].name(),
                    pair[0].name()
                )));
            }
        }
        let mut names = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("datasets[{i}].name: `{}` is not a valid name", d.name)));
            }
            if !names.insert(d.name.as_str()) {
                return Err(Error::Config(format!("datasets[{i}].name: duplicate dataset `{}`", d.name)));
            }
            d.spec().map_err(|e| Error::Config(format!("datasets[{i}].p_b: {e}")))?;
            if d.samples == 0 || d.length == 0 {
                return Err(Error::Config(format!("datasets[{i}]: samples and length must be positive")));
            }
        }
        let dataset_available = |name: &str| names.contains(name) || artifacts::dataset_path(out, name).exists();
        for (i, t) in self.train.iter().enumerate() {
            for name in &t.datasets {
                if !dataset_available(name) {
                    return Err(Error::Config(format!("train[{i}].datasets: unknown dataset `{name}`")));
                }
            }
            if t.w.is_empty() {
                return Err(Error::Config(format!("train[{i}].w: at least one meta-prior is required")));
            }
            if let Some(w) = t.w.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
                return Err(Error::Config(format!("train[{i}].w: meta-prior {w} must be finite and >= 0")));
            }
            if t.seeds.is_empty() {
                return Err(Error::Config(format!("train[{i}].seeds: at least one seed is required")));
            }
            if t.epochs == 0 {
                return Err(Error::Config(format!("train[{i}].epochs: must be at least 1")));
            }
            if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
                return Err(Error::Config(format!("train[{i}].learning_rate: must be finite and >= 0")));
            }
        }
        if let Some(r) = &self.regen {
            if r.repeats < 2 {
                return Err(Error::Config("regen.repeats: at least two regenerations are needed".into()));
            }
            if r.horizon < 2 {
                return Err(Error::Config("regen.horizon: must cover at least the two bootstrap steps".into()));
            }
        }
        let cells: BTreeSet<String> = self.train_cells().iter().map(|(k, _)| k.file_stem()).collect();
        let mut experiment_names = BTreeSet::new();
        for (i, x) in self.interact.iter().enumerate() {
            if x.name.is_empty() || x.name.contains(['/', '\\']) || !experiment_names.insert(x.name.as_str()) {
                return Err(Error::Config(format!(
                    "interact[{i}].name: `{}` is empty, duplicated or not a valid name",
                    x.name
                )));
            }
            for (side, agent) in [("a", &x.a), ("b", &x.b)] {
                if !dataset_available(&agent.dataset) {
                    return Err(Error::Config(format!(
                        "interact[{i}].{side}.dataset: unknown dataset `{}`",
                        agent.dataset
                    )));
                }
                let seeds = self.agent_seeds(agent);
                if seeds.is_empty() {
                    return Err(Error::Config(format!(
                        "interact[{i}].{side}.w: no train block covers dataset `{}` with w = {}",
                        agent.dataset, agent.w
                    )));
                }
                for seed in seeds {
                    let key = CheckpointKey { dataset: agent.dataset.clone(), w: agent.w, seed };
                    if !cells.contains(&key.file_stem()) && !artifacts::checkpoint_path(out, &key).exists() {
                        return Err(Error::Config(format!(
                            "interact[{i}].{side}.seeds: checkpoint `{}` is neither trained by the plan nor present",
                            key.file_stem()
                        )));
                    }
                }
            }
            if x.runs == 0 || x.window == 0 || x.epochs == 0 {
                return Err(Error::Config(format!("interact[{i}]: runs, window and epochs must be at least 1")));
            }
            if !(x.learning_rate > 0.0 && x.learning_rate.is_finite()) {
                return Err(Error::Config(format!("interact[{i}].learning_rate: must be positive")));
            }
        }
        Ok(())
    }
}
