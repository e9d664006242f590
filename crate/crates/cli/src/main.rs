use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvrnn::dataset::PfsmSpec;
use pvrnn::interaction::InteractionConfig;
use pvrnn::Result;
use pvrnn_cli::analyze::{run_summary, write_run_trace};
use pvrnn_cli::artifacts::{self, InteractionArtifact, RegenConfig};
use pvrnn_cli::stages::{self, Outcome, TrainJob};
use pvrnn_cli::{exit_code, ExperimentPlan};

#[derive(Parser)]
#[command(name = "pvrnn", version, about = "PV-RNN training, regeneration analysis and dyadic interaction")]
struct Cli {
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a primitive-sequence dataset.
    GenData(GenData),
    /// Train one network on a dataset.
    Train(Train),
    /// Regenerate sequences from a trained network's prior.
    Regen(Regen),
    /// Run a dyad between two trained networks.
    Interact(Interact),
    /// Classify regenerations and dyad traces of a run directory.
    Analyze(RunDir),
    /// Print and save the consolidated tables of an analyzed run directory.
    Report(RunDir),
    /// Execute an experiment plan.
    RunPlan(RunPlan),
}

#[derive(Args)]
struct GenData {
    /// Probability of B after A.
    #[arg(long, default_value_t = 0.2)]
    p_b: f64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 400)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Bottom-layer meta-prior; upper layers use 10w and 100w.
    #[arg(long)]
    w: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = pvrnn::training::DESK_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Checkpoint file; the epoch log is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Regen {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 400)]
    horizon: usize,
    /// Training sample whose stored posterior seeds the first two steps; random by default.
    #[arg(long)]
    sample: Option<usize>,
    /// Use the prior mean instead of sampling.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Interact {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 70)]
    window: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    /// Start new posterior steps at N(0, I) instead of the prior.
    #[arg(long)]
    zero_init: bool,
    #[arg(long, default_value = "dyad")]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the trace artifact, trace CSV and summary JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunDir {
    #[arg(long)]
    run_dir: PathBuf,
    /// Classifier seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunPlan {
    plan: PathBuf,
    /// Overrides the plan's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

fn announce(what: &str, path: &Path, outcome: Outcome) {
    match outcome {
        Outcome::Written => eprintln!("{what}: wrote {}", path.display()),
        Outcome::Skipped => eprintln!("{what}: {} exists, skipped (use --force to redo)", path.display()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    match cli.command {
        Command::GenData(c) => {
            let spec = PfsmSpec::new(c.p_b)?;
            announce("gen-data", &c.out, stages::gen_data(&spec, c.samples, c.length, c.seed, &c.out, force)?);
        }
        Command::Train(c) => {
            let job = TrainJob {
                w: c.w,
                seed: c.seed,
                epochs: c.epochs,
                learning_rate: c.learning_rate,
                checkpoint_every: c.checkpoint_every,
                log_every: c.log_every,
            };
            let log = c.out.with_extension("log");
            announce("train", &c.out, stages::train(&c.data, &job, &c.out, &log, force)?);
        }
        Command::Regen(c) => {
            let cfg =
                RegenConfig { repeats: c.repeats, horizon: c.horizon, seed: c.seed, deterministic: c.deterministic };
            announce("regen", &c.out, stages::regen(&c.checkpoint, None, &cfg, c.sample, &c.out, force)?);
        }
        Command::Interact(c) => {
            let cfg = InteractionConfig {
                window: c.window,
                epochs: c.epochs,
                steps: c.steps,
                learning_rate: c.learning_rate,
                seeds: stages::interaction_seeds(c.seed, &c.name, 0),
                zero_init: c.zero_init,
            };
            cfg.validate()?;
            let trace_path = c.out.join("run.json");
            let outcome = stages::interact(&c.name, 0, [&c.a, &c.b], [None, None], &cfg, &trace_path, force)?;
            announce("interact", &trace_path, outcome);
            let art = InteractionArtifact::load(&trace_path)?;
            write_run_trace(&c.out.join("trace.csv"), &art, c.seed)?;
            let summary = run_summary(&art, c.seed, 20, 400)?;
            artifacts::write_json(&c.out.join("summary.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Analyze(c) => {
            let path = artifacts::analysis_dir(&c.run_dir).join("summary.json");
            announce("analyze", &path, pvrnn_cli::analyze::analyze(&c.run_dir, c.seed, force)?);
        }
        Command::Report(c) => {
            let (_, text) = pvrnn_cli::report::report(&c.run_dir, force)?;
            print!("{text}");
        }
        Command::RunPlan(c) => {
            let plan = ExperimentPlan::load(&c.plan)?;
            let out = c.out.or_else(|| plan.out.clone()).unwrap_or_else(|| PathBuf::from("."));
            for log in stages::run_plan(&plan, &out, force, c.log_every)? {
                eprintln!("{}: {} written, {} skipped", log.stage.name(), log.written, log.skipped);
            }
            let report = artifacts::report_dir(&out).join("summary.txt");
            if plan.resolved_stages().contains(&pvrnn_cli::Stage::Report) && report.exists() {
                print!("{}", std::fs::read_to_string(report)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
