//! Run-directory layout and the self-describing artifact files.

use std::fs;
use std::path::{Path, PathBuf};

use pvrnn::analysis::Regeneration;
use pvrnn::dataset::PfsmSpec;
use pvrnn::interaction::{InteractionConfig, InteractionTrace};
use pvrnn::model::ModelConfig;
use pvrnn::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const REGEN_FORMAT: &str = "pvrnn-regen";
pub const INTERACTION_FORMAT: &str = "pvrnn-interaction";
pub const ANALYSIS_FORMAT: &str = "pvrnn-analysis";
pub const ARTIFACT_VERSION: u32 = 1;

/// Identifies one trained network of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointKey {
    pub dataset: String,
    pub w: f64,
    pub seed: u64,
}

impl CheckpointKey {
    pub fn file_stem(&self) -> String {
        format!("{}_w{}_s{}", self.dataset, self.w, self.seed)
    }
}

pub fn dataset_path(out: &Path, name: &str) -> PathBuf {
    out.join("data").join(format!("{name}.json"))
}

pub fn checkpoint_path(out: &Path, key: &CheckpointKey) -> PathBuf {
    out.join("checkpoints").join(format!("{}.json", key.file_stem()))
}

pub fn train_log_path(out: &Path, key: &CheckpointKey) -> PathBuf {
    out.join("checkpoints").join(format!("{}.log", key.file_stem()))
}

pub fn regen_path(out: &Path, key: &CheckpointKey) -> PathBuf {
    out.join("regen").join(format!("{}.json", key.file_stem()))
}

pub fn interaction_path(out: &Path, experiment: &str, run: usize) -> PathBuf {
    out.join("interact").join(experiment).join(format!("run{run}.json"))
}

pub fn analysis_dir(out: &Path) -> PathBuf {
    out.join("analysis")
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

/// Mixes tags into a base seed (SplitMix64 finalizer per tag).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x = x.wrapping_add(t.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Writes pretty JSON through a temporary file so a crash never leaves a
/// truncated artifact behind.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn check_format(path: &Path, format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected || version != ARTIFACT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: expected {expected} version {ARTIFACT_VERSION}, found {format} version {version}",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenConfig {
    pub repeats: usize,
    pub horizon: usize,
    pub seed: u64,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenArtifact {
    pub format: String,
    pub version: u32,
    pub checkpoint: String,
    pub key: Option<CheckpointKey>,
    pub model: ModelConfig,
    pub spec: PfsmSpec,
    pub config: RegenConfig,
    /// Training sample whose first two posterior steps seeded every repeat.
    pub sample: usize,
    pub regenerations: Vec<Regeneration>,
}

impl RegenArtifact {
    pub fn load(path: &Path) -> Result<Self> {
        let a: Self = read_json(path)?;
        check_format(path, &a.format, a.version, REGEN_FORMAT)?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub checkpoint: String,
    pub key: Option<CheckpointKey>,
    pub model: ModelConfig,
    pub spec: PfsmSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionArtifact {
    pub format: String,
    pub version: u32,
    pub experiment: String,
    pub run: usize,
    pub agents: [AgentInfo; 2],
    pub config: InteractionConfig,
    pub trace: InteractionTrace,
}

impl InteractionArtifact {
    pub fn load(path: &Path) -> Result<Self> {
        let a: Self = read_json(path)?;
        check_format(path, &a.format, a.version, INTERACTION_FORMAT)?;
        Ok(a)
    }
}

/// Sorted JSON files directly inside `dir`; empty when it does not exist.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

/// Sorted subdirectories of `dir`.
pub fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> =
        fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    out.sort();
    Ok(out)
}

pub fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
