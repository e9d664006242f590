//! The `analyze` stage: classify every regeneration and dyad trace, then
//! write Table-II and Table-III shaped CSVs, per-step traces and a JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pvrnn::analysis::esn::{default_classifier, EsnConfig};
use pvrnn::analysis::metrics::ratio_from_counts;
use pvrnn::analysis::{dyad_summary, esn_classify, regen_report, DyadSummary, RegenReport};
use pvrnn::dataset::PfsmSpec;
use pvrnn::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    self, csv_error, CheckpointKey, InteractionArtifact, RegenArtifact, ANALYSIS_FORMAT, ARTIFACT_VERSION,
};
use crate::stages::Outcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAnalysis {
    pub checkpoint: String,
    pub key: Option<CheckpointKey>,
    pub dataset: String,
    pub w: f64,
    pub spec: PfsmSpec,
    pub sample: usize,
    pub report: RegenReport,
}

/// Regeneration table: one row per dataset and meta-prior, means over networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub dataset: String,
    pub w: f64,
    pub networks: usize,
    pub occupancy_a: f64,
    pub occupancy_b: f64,
    pub occupancy_c: f64,
    pub not_classified: f64,
    pub not_classified_std: f64,
    pub bc_ratio_b: Option<f64>,
    pub bc_ratio_b_std: Option<f64>,
    pub divergence_step: f64,
    pub divergence_step_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub run: usize,
    pub checkpoints: [String; 2],
    pub summary: DyadSummary,
}

/// Dyad table: one row per experiment and agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub experiment: String,
    pub agent: String,
    pub dataset: String,
    pub w: f64,
    pub runs: usize,
    /// B share of stand-alone regenerations of the agent's networks, pooled.
    pub standalone_bc_b: Option<f64>,
    /// B share of all interaction occurrences, pooled over runs.
    pub interaction_bc_b: Option<f64>,
    pub interaction_bc_b_std: Option<f64>,
    pub sync_rate: Option<f64>,
    pub sync_rate_std: Option<f64>,
    pub sync_rate_all: Option<f64>,
    pub chance_rate: f64,
    pub mean_kl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentAnalysis {
    pub experiment: String,
    pub runs: Vec<RunAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub format: String,
    pub version: u32,
    pub esn_seed: u64,
    pub esn: EsnConfig,
    pub checkpoints: Vec<CheckpointAnalysis>,
    pub table2: Vec<Table2Row>,
    pub experiments: Vec<ExperimentAnalysis>,
    pub table3: Vec<Table3Row>,
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn identity(key: &Option<CheckpointKey>, w_fallback: f64, checkpoint: &str) -> (String, f64) {
    match key {
        Some(k) => (k.dataset.clone(), k.w),
        None => (checkpoint.to_string(), w_fallback),
    }
}

fn table2(checkpoints: &[CheckpointAnalysis]) -> Vec<Table2Row> {
    let mut groups: BTreeMap<(String, String), Vec<&CheckpointAnalysis>> = BTreeMap::new();
    for c in checkpoints {
        groups.entry((c.dataset.clone(), format!("{:020.10}", c.w))).or_default().push(c);
    }
    groups
        .into_values()
        .map(|g| {
            let col = |f: &dyn Fn(&RegenReport) -> f64| g.iter().map(|c| f(&c.report)).collect::<Vec<_>>();
            let mean = |f: &dyn Fn(&RegenReport) -> f64| mean_std(&col(f)).map_or(0.0, |m| m.0);
            let nc = mean_std(&col(&|r| r.occupancy.not_classified)).unwrap_or((0.0, 0.0));
            let div = mean_std(&col(&|r| r.divergence_step)).unwrap_or((0.0, 0.0));
            let bc: Vec<f64> = g.iter().filter_map(|c| c.report.bc_ratio.map(|r| r.0)).collect();
            let bc = mean_std(&bc);
            Table2Row {
                dataset: g[0].dataset.clone(),
                w: g[0].w,
                networks: g.len(),
                occupancy_a: mean(&|r| r.occupancy.a),
                occupancy_b: mean(&|r| r.occupancy.b),
                occupancy_c: mean(&|r| r.occupancy.c),
                not_classified: nc.0,
                not_classified_std: nc.1,
                bc_ratio_b: bc.map(|m| m.0),
                bc_ratio_b_std: bc.map(|m| m.1),
                divergence_step: div.0,
                divergence_step_std: div.1,
            }
        })
        .collect()
}

fn table3(
    experiments: &[ExperimentAnalysis],
    checkpoints: &[CheckpointAnalysis],
    artifacts: &[Vec<InteractionArtifact>],
) -> Vec<Table3Row> {
    let mut rows = Vec::new();
    for (exp, arts) in experiments.iter().zip(artifacts) {
        if exp.runs.is_empty() {
            continue;
        }
        let syncs: Vec<f64> = exp.runs.iter().filter_map(|r| r.summary.sync_rate).collect();
        let sync = mean_std(&syncs);
        let sync_all = mean_std(&exp.runs.iter().filter_map(|r| r.summary.sync_rate_all).collect::<Vec<_>>());
        for agent in 0..2 {
            let info = &arts[0].agents[agent];
            let (dataset, w) = identity(&info.key, info.model.base_w(), &info.checkpoint);
            let (mut b, mut c) = (0, 0);
            for r in &exp.runs {
                b += r.summary.bc_counts[agent].0;
                c += r.summary.bc_counts[agent].1;
            }
            let per_run: Vec<f64> = exp.runs.iter().filter_map(|r| r.summary.bc_ratio[agent].map(|x| x.0)).collect();
            let used: Vec<&str> = exp.runs.iter().map(|r| r.checkpoints[agent].as_str()).collect();
            let (mut sb, mut sc) = (0, 0);
            for ck in checkpoints.iter().filter(|ck| used.contains(&ck.checkpoint.as_str())) {
                sb += ck.report.bc_counts.0;
                sc += ck.report.bc_counts.1;
            }
            let n_layers = exp.runs[0].summary.mean_kl[agent].len();
            let mean_kl = (0..n_layers)
                .map(|l| exp.runs.iter().map(|r| r.summary.mean_kl[agent][l]).sum::<f64>() / exp.runs.len() as f64)
                .collect();
            rows.push(Table3Row {
                experiment: exp.experiment.clone(),
                agent: ["a", "b"][agent].into(),
                dataset,
                w,
                runs: exp.runs.len(),
                standalone_bc_b: ratio_from_counts((sb, sc)).map(|r| r.0),
                interaction_bc_b: ratio_from_counts((b, c)).map(|r| r.0),
                interaction_bc_b_std: mean_std(&per_run).map(|m| m.1),
                sync_rate: sync.map(|m| m.0),
                sync_rate_std: sync.map(|m| m.1),
                sync_rate_all: sync_all.map(|m| m.0),
                chance_rate: exp.runs[0].summary.chance_rate,
                mean_kl,
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.4}"))
}

fn write_table2(path: &Path, rows: &[Table2Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record([
        "dataset",
        "w",
        "networks",
        "occupancy_a",
        "occupancy_b",
        "occupancy_c",
        "not_classified",
        "bc_ratio",
        "divergence_step",
    ])
    .map_err(csv_error)?;
    for r in rows {
        let bc = r.bc_ratio_b.map_or(String::new(), |b| format!("{:.1}/{:.1}", b, 100.0 - b));
        w.write_record([
            r.dataset.clone(),
            r.w.to_string(),
            r.networks.to_string(),
            format!("{:.4}", r.occupancy_a),
            format!("{:.4}", r.occupancy_b),
            format!("{:.4}", r.occupancy_c),
            format!("{:.4}", r.not_classified),
            bc,
            format!("{:.4}", r.divergence_step),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn write_table3(path: &Path, rows: &[Table3Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let n_layers = rows.first().map_or(0, |r| r.mean_kl.len());
    let mut header: Vec<String> = [
        "experiment",
        "agent",
        "dataset",
        "w",
        "runs",
        "standalone_bc_b",
        "interaction_bc_b",
        "interaction_bc_b_std",
        "sync_rate",
        "sync_rate_std",
        "sync_rate_all",
        "chance_rate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=n_layers).map(|l| format!("mean_kl_{l}")));
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![
            r.experiment.clone(),
            r.agent.clone(),
            r.dataset.clone(),
            r.w.to_string(),
            r.runs.to_string(),
            opt(r.standalone_bc_b),
            opt(r.interaction_bc_b),
            opt(r.interaction_bc_b_std),
            opt(r.sync_rate),
            opt(r.sync_rate_std),
            opt(r.sync_rate_all),
            format!("{:.4}", r.chance_rate),
        ];
        rec.extend(r.mean_kl.iter().map(|k| format!("{k:e}")));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn label_char(s: &str, k: usize) -> String {
    s.as_bytes().get(k).map_or(String::new(), |c| (*c as char).to_string())
}

fn write_regen_trace(path: &Path, art: &RegenArtifact, esn: &pvrnn::analysis::EsnModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["repeat", "t", "label", "confidence", "q1", "q2", "q3", "q4", "q5", "q6"]).map_err(csv_error)?;
    for (rep, r) in art.regenerations.iter().enumerate() {
        let proprio = r.proprio_degrees();
        let cls = esn_classify(esn, &proprio);
        let labels = cls.label_string();
        for (k, q) in proprio.iter().enumerate() {
            let mut rec =
                vec![rep.to_string(), (k + 1).to_string(), label_char(&labels, k), format!("{:.4}", cls.confidence[k])];
            rec.extend(q.iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_interaction_trace(path: &Path, art: &InteractionArtifact, esn: &pvrnn::analysis::EsnModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let n_layers = art.agents[0].model.num_layers();
    let mut header: Vec<String> = ["t", "agent", "label", "confidence"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n_layers).map(|l| format!("kl_{l}")));
    header.extend((1..=6).map(|k| format!("q{k}")));
    header.extend(
        ["obs_x_r", "obs_y_r", "obs_x_l", "obs_y_l", "pred_x_r", "pred_y_r", "pred_x_l", "pred_y_l"].map(String::from),
    );
    let nz = art.trace.agents[0].first().map_or(0, |s| s.mu_p.len());
    header.extend((1..=nz).map(|k| format!("mu_p_{k}")));
    header.extend((1..=nz).map(|k| format!("mu_q_{k}")));
    w.write_record(&header).map_err(csv_error)?;
    for agent in 0..2 {
        let cls = esn_classify(esn, &art.trace.emitted(agent));
        let labels = cls.label_string();
        for (k, s) in art.trace.agents[agent].iter().enumerate() {
            let mut rec = vec![
                s.t.to_string(),
                ["a", "b"][agent].to_string(),
                label_char(&labels, k),
                format!("{:.4}", cls.confidence[k]),
            ];
            rec.extend(s.kl.iter().map(|v| format!("{v:e}")));
            rec.extend(s.emitted.iter().map(|v| format!("{v:.4}")));
            rec.extend(s.observed_extero.iter().chain(&s.predicted_extero).map(|v| format!("{v:.5}")));
            rec.extend(s.mu_p.iter().chain(&s.mu_q).map(|v| format!("{v:.5}")));
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the analysis over every regeneration and interaction artifact of `out`.
pub fn analyze(out: &Path, esn_seed: u64, force: bool) -> Result<Outcome> {
    let dir = artifacts::analysis_dir(out);
    let summary_path = dir.join("summary.json");
    if !force && summary_path.exists() {
        return Ok(Outcome::Skipped);
    }
    let regen_files = artifacts::json_files(&out.join("regen"))?;
    let experiment_dirs = artifacts::subdirs(&out.join("interact"))?;
    if regen_files.is_empty() && experiment_dirs.is_empty() {
        return Err(Error::Usage(format!(
            "nothing to analyze in {}: missing regen/*.json and interact/<experiment>/run*.json",
            out.display()
        )));
    }
    fs::create_dir_all(dir.join("regen"))?;
    fs::create_dir_all(dir.join("interact"))?;
    let mut esn_rng = ChaCha8Rng::seed_from_u64(esn_seed);
    let esn = default_classifier(&mut esn_rng)?;

    let mut checkpoints = Vec::new();
    for path in &regen_files {
        let art = RegenArtifact::load(path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(artifacts::derive_seed(art.config.seed, &[5]));
        let report = regen_report(&art.regenerations, &esn, &mut rng)?;
        let stem = path.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
        write_regen_trace(&dir.join("regen").join(format!("{stem}.csv")), &art, &esn)?;
        let (dataset, w) = identity(&art.key, art.model.base_w(), &art.checkpoint);
        checkpoints.push(CheckpointAnalysis {
            checkpoint: art.checkpoint.clone(),
            key: art.key.clone(),
            dataset,
            w,
            spec: art.spec,
            sample: art.sample,
            report,
        });
    }

    let mut experiments = Vec::new();
    let mut all_artifacts = Vec::new();
    for exp_dir in &experiment_dirs {
        let name = exp_dir.file_name().map_or(String::new(), |s| s.to_string_lossy().into_owned());
        let mut runs = Vec::new();
        let mut arts = Vec::new();
        let trace_dir = dir.join("interact").join(&name);
        fs::create_dir_all(&trace_dir)?;
        for path in artifacts::json_files(exp_dir)? {
            let art = InteractionArtifact::load(&path)?;
            let summary = dyad_summary(&art.trace, &esn, [&art.agents[0].spec, &art.agents[1].spec])?;
            write_interaction_trace(&trace_dir.join(format!("run{}.csv", art.run)), &art, &esn)?;
            runs.push(RunAnalysis {
                run: art.run,
                checkpoints: [art.agents[0].checkpoint.clone(), art.agents[1].checkpoint.clone()],
                summary,
            });
            arts.push(art);
        }
        runs.sort_by_key(|r| r.run);
        arts.sort_by_key(|a| a.run);
        experiments.push(ExperimentAnalysis { experiment: name, runs });
        all_artifacts.push(arts);
    }
    let t2 = table2(&checkpoints);
    let t3 = table3(&experiments, &checkpoints, &all_artifacts);
    write_table2(&dir.join("table2.csv"), &t2)?;
    write_table3(&dir.join("table3.csv"), &t3)?;
    let summary = AnalysisSummary {
        format: ANALYSIS_FORMAT.into(),
        version: ARTIFACT_VERSION,
        esn_seed,
        esn: esn.config.clone(),
        checkpoints,
        table2: t2,
        experiments,
        table3: t3,
    };
    artifacts::write_json(&summary_path, &summary)?;
    Ok(Outcome::Written)
}

impl AnalysisSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = artifacts::read_json(path)?;
        if s.format != ANALYSIS_FORMAT || s.version != ARTIFACT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: not a version {ARTIFACT_VERSION} analysis summary",
                path.display()
            )));
        }
        Ok(s)
    }
}

/// Table-III fields of one dyad run, for the `interact` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryAgent {
    pub checkpoint: String,
    pub w: f64,
    pub spec: PfsmSpec,
    pub standalone_bc: Option<(f64, f64)>,
    pub interaction_bc: Option<(f64, f64)>,
    pub mean_kl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub run: usize,
    pub esn_seed: u64,
    pub agents: [RunSummaryAgent; 2],
    pub sync_rate: Option<f64>,
    pub sync_rate_all: Option<f64>,
    pub chance_rate: f64,
    pub labels: [String; 2],
}

/// Summarizes one interaction; stand-alone ratios come from fresh
/// regenerations of each checkpoint.
pub fn run_summary(
    art: &InteractionArtifact,
    esn_seed: u64,
    regen_repeats: usize,
    regen_horizon: usize,
) -> Result<RunSummary> {
    let mut esn_rng = ChaCha8Rng::seed_from_u64(esn_seed);
    let esn = default_classifier(&mut esn_rng)?;
    let d = dyad_summary(&art.trace, &esn, [&art.agents[0].spec, &art.agents[1].spec])?;
    let mut agents = Vec::new();
    for (k, info) in art.agents.iter().enumerate() {
        let st = pvrnn::training::load_checkpoint(Path::new(&info.checkpoint))?;
        let mut rng = ChaCha8Rng::seed_from_u64(artifacts::derive_seed(esn_seed, &[6, k as u64]));
        let regens = pvrnn::analysis::prior_regeneration(
            &st.params,
            &st.model,
            &st.adaptation[0],
            regen_repeats,
            regen_horizon,
            &mut rng,
            false,
        )?;
        let rep = regen_report(&regens, &esn, &mut rng)?;
        agents.push(RunSummaryAgent {
            checkpoint: info.checkpoint.clone(),
            w: info.model.base_w(),
            spec: info.spec,
            standalone_bc: rep.bc_ratio,
            interaction_bc: d.bc_ratio[k],
            mean_kl: d.mean_kl[k].clone(),
        });
    }
    let [a, b]: [RunSummaryAgent; 2] = agents.try_into().map_err(|_| Error::Usage("two agents expected".into()))?;
    Ok(RunSummary {
        experiment: art.experiment.clone(),
        run: art.run,
        esn_seed,
        agents: [a, b],
        sync_rate: d.sync_rate,
        sync_rate_all: d.sync_rate_all,
        chance_rate: d.chance_rate,
        labels: d.labels,
    })
}

/// Per-step CSV of one interaction artifact.
pub fn write_run_trace(path: &Path, art: &InteractionArtifact, esn_seed: u64) -> Result<()> {
    let mut esn_rng = ChaCha8Rng::seed_from_u64(esn_seed);
    let esn = default_classifier(&mut esn_rng)?;
    write_interaction_trace(path, art, &esn)
}
