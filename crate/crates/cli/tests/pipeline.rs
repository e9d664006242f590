use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pvrnn_cli::stages::run_plan;
use pvrnn_cli::{ExperimentPlan, Stage};

const TINY_PLAN: &str = r#"
seed = 11

[[datasets]]
name = "c_pref"
p_b = 0.2
samples = 2
length = 80

[[datasets]]
name = "b_pref"
p_b = 0.8
samples = 2
length = 80

[[train]]
datasets = ["c_pref"]
w = [0.005, 3.4]
seeds = [1]
epochs = 6
checkpoint_every = 4

[[train]]
datasets = ["b_pref"]
w = [3.4]
seeds = [1]
epochs = 6

[regen]
repeats = 3
horizon = 80

[[interact]]
name = "mixed"
a = { dataset = "c_pref", w = 0.005 }
b = { dataset = "b_pref", w = 3.4 }
runs = 1
steps = 8
window = 5
epochs = 4

[[interact]]
name = "loose"
a = { dataset = "c_pref", w = 3.4 }
b = { dataset = "b_pref", w = 3.4 }
runs = 1
steps = 8
window = 5
epochs = 4

[analyze]

[report]
"#;

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn empty_plan_succeeds_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::from_toml("").unwrap();
    assert!(run_plan(&plan, dir.path(), false, 0).unwrap().is_empty());
    assert!(files(dir.path()).is_empty());
}

#[test]
fn tiny_plan_runs_every_stage_reproducibly_and_idempotently() {
    let plan = ExperimentPlan::from_toml(TINY_PLAN).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let logs = run_plan(&plan, d1.path(), false, 0).unwrap();
    assert_eq!(logs.iter().map(|l| l.stage).collect::<Vec<_>>(), Stage::ORDER.to_vec());
    assert!(logs.iter().all(|l| l.skipped == 0));

    let table2 = fs::read_to_string(d1.path().join("analysis/table2.csv")).unwrap();
    let mut lines = table2.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 6);
    assert_eq!(lines.count(), 3);
    let table3 = fs::read_to_string(d1.path().join("analysis/table3.csv")).unwrap();
    assert_eq!(table3.lines().count(), 1 + 4);
    assert!(table3.contains("mixed") && table3.contains("0.3200"));
    let text = fs::read_to_string(d1.path().join("report/summary.txt")).unwrap();
    assert!(text.contains("Synchronization against chance"));

    let again = run_plan(&plan, d1.path(), false, 0).unwrap();
    assert!(again.iter().all(|l| l.written == 0), "{again:?}");

    run_plan(&plan, d2.path(), false, 0).unwrap();
    let (f1, f2) = (files(d1.path()), files(d2.path()));
    assert_eq!(f1, f2);
    for f in &f1 {
        let (a, b) = (fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap());
        let (a, b) = (String::from_utf8_lossy(&a), String::from_utf8_lossy(&b));
        let strip = |s: &str, d: &Path| s.replace(&d.display().to_string(), "<out>");
        assert_eq!(strip(&a, d1.path()), strip(&b, d2.path()), "{} differs between runs", f.display());
    }
}

#[test]
fn forced_rerun_reproduces_artifacts_bitwise() {
    let plan = ExperimentPlan::from_toml(TINY_PLAN).unwrap();
    let d = tempfile::tempdir().unwrap();
    run_plan(&plan, d.path(), false, 0).unwrap();
    let before: Vec<Vec<u8>> = files(d.path()).iter().map(|f| fs::read(d.path().join(f)).unwrap()).collect();
    let logs = run_plan(&plan, d.path(), true, 0).unwrap();
    assert!(logs.iter().all(|l| l.skipped == 0));
    let after: Vec<Vec<u8>> = files(d.path()).iter().map(|f| fs::read(d.path().join(f)).unwrap()).collect();
    assert!(before == after);
}

#[test]
fn report_lists_every_missing_input() {
    let d = tempfile::tempdir().unwrap();
    let err = pvrnn_cli::report::report(d.path(), false).unwrap_err().to_string();
    for f in ["summary.json", "table2.csv", "table3.csv"] {
        assert!(err.contains(f), "{err}");
    }
    let err = pvrnn_cli::analyze::analyze(d.path(), 0, false).unwrap_err().to_string();
    assert!(err.contains("regen") && err.contains("interact"), "{err}");
}

fn pvrnn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pvrnn")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("d.json");
    let data_s = data.to_str().unwrap();
    assert_eq!(pvrnn(&["gen-data", "--p-b", "1.5", "--out", data_s]).status.code(), Some(2));
    let ok = pvrnn(&["gen-data", "--samples", "1", "--length", "40", "--out", data_s]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let plan = d.path().join("plan.toml");
    fs::write(&plan, "stages = [\"report\", \"train\"]").unwrap();
    let out = pvrnn(&["run-plan", plan.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stages"));

    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&data).unwrap()).unwrap();
    json["samples"][0]["proprio"][5][0] = serde_json::json!(1e308);
    fs::write(&data, serde_json::to_string(&json).unwrap()).unwrap();
    let ck = d.path().join("ck.json");
    let out = pvrnn(&[
        "train",
        "--data",
        data_s,
        "--w",
        "1",
        "--epochs",
        "2",
        "--log-every",
        "0",
        "--out",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_plans_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans");
    for name in ["desk.toml", "smoke.toml"] {
        let plan = ExperimentPlan::load(&dir.join(name)).unwrap();
        assert_eq!(plan.resolved_stages(), Stage::ORDER.to_vec(), "{name}");
    }
}
