//! The `report` stage: consolidated text and JSON from an analyzed run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pvrnn::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::analyze::{AnalysisSummary, Table2Row, Table3Row};
use crate::artifacts;
use crate::stages::Outcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table2: Vec<Table2Row>,
    pub table3: Vec<Table3Row>,
    /// Per experiment: mean sync rate against the chance level, both in percent.
    pub sync_vs_chance: Vec<(String, Option<f64>, f64)>,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.digits$}"))
}

pub fn render(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Stand-alone regeneration (per dataset and meta-prior, mean over networks)");
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>4} {:>7} {:>7} {:>7} {:>9} {:>11} {:>10}",
        "dataset", "w", "n", "A%", "B%", "C%", "not-cl%", "B/C", "diverge"
    );
    for r in &report.table2 {
        let bc = r.bc_ratio_b.map_or("-".into(), |b| format!("{:.0}/{:.0}", b, 100.0 - b));
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>4} {:>7.1} {:>7.1} {:>7.1} {:>9.1} {:>11} {:>10.1}",
            r.dataset,
            r.w,
            r.networks,
            r.occupancy_a,
            r.occupancy_b,
            r.occupancy_c,
            r.not_classified,
            bc,
            r.divergence_step
        );
    }
    let _ = writeln!(s, "\nInteraction (per experiment and agent)");
    let _ = writeln!(
        s,
        "{:<12} {:>5} {:<12} {:>8} {:>5} {:>10} {:>10} {:>8} {:>7} {:>10}",
        "experiment", "agent", "dataset", "w", "runs", "alone B%", "inter B%", "sync%", "chance", "KL l1"
    );
    for r in &report.table3 {
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:<12} {:>8} {:>5} {:>10} {:>10} {:>8} {:>7.2} {:>10}",
            r.experiment,
            r.agent,
            r.dataset,
            r.w,
            r.runs,
            fmt_opt(r.standalone_bc_b, 1),
            fmt_opt(r.interaction_bc_b, 1),
            fmt_opt(r.sync_rate, 1),
            r.chance_rate,
            r.mean_kl.first().map_or("-".into(), |k| format!("{k:.3e}"))
        );
    }
    if !report.sync_vs_chance.is_empty() {
        let _ = writeln!(s, "\nSynchronization against chance");
        for (name, sync, chance) in &report.sync_vs_chance {
            let _ = writeln!(s, "{name:<12} sync {:>6}%  chance {:>5.1}%", fmt_opt(*sync, 1), chance);
        }
    }
    s
}

/// Builds the report from `analysis/` and writes `report/summary.txt` and
/// `report/report.json`. Returns the rendered text.
pub fn report(out: &Path, force: bool) -> Result<(Outcome, String)> {
    let analysis = artifacts::analysis_dir(out);
    let required = ["summary.json", "table2.csv", "table3.csv"].map(|f| analysis.join(f));
    let missing: Vec<String> = required.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::Usage(format!("cannot report on {}: missing {}", out.display(), missing.join(", "))));
    }
    let dir = artifacts::report_dir(out);
    let text_path = dir.join("summary.txt");
    if !force && text_path.exists() {
        return Ok((Outcome::Skipped, fs::read_to_string(&text_path)?));
    }
    let summary = AnalysisSummary::load(&required[0])?;
    let mut sync_vs_chance = Vec::new();
    for r in summary.table3.iter().filter(|r| r.agent == "a") {
        sync_vs_chance.push((r.experiment.clone(), r.sync_rate, 100.0 * r.chance_rate));
    }
    let rep = Report { table2: summary.table2, table3: summary.table3, sync_vs_chance };
    let text = render(&rep);
    fs::create_dir_all(&dir)?;
    artifacts::write_json(&dir.join("report.json"), &rep)?;
    fs::write(&text_path, &text)?;
    Ok((Outcome::Written, text))
}
