//! `doglegs` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use doglegs::baselines::EstimatorKind;
use doglegs::contact::contact_intervals;
use doglegs::dataset_io::{
    load_config, load_dataset, read_trajectory, write_dataset, write_event_log, write_state_log, ContactSource,
    Dataset, RunConfig,
};
use doglegs::metrics::{evaluate, write_pose_errors, AlignMode, EvalOptions, MetricReport, PoseTrack};
use doglegs::pipeline::{align_epochs, contact_plan, run_estimator, Timing};
use doglegs::simulator::simulate;
use doglegs::{Error, Result};

const OUTPUT_MANIFEST: &str = "output_manifest.json";
const SUMMARY: &str = "summary.json";

#[derive(Parser)]
#[command(name = "doglegs", version, about = "Multi-IMU legged-robot state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a walk and write it as a dataset.
    Simulate(SimulateArgs),
    /// Run an estimator on a dataset or on in-memory simulations.
    Run(RunArgs),
    /// Compare an estimated trajectory with a reference.
    Eval(EvalArgs),
    /// Detect stance phases with the GLRT and write contact intervals.
    DetectContact(DetectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured gait seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory; without it every run simulates its own seed.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// doglegs, legodom or footins:<leg>
    #[arg(long, default_value = "doglegs")]
    estimator: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to simulate and run.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Parallel workers for multi-seed runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Report metrics without aligning the estimate to the reference.
    #[arg(long)]
    no_align: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (state log or truth-format CSV).
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_align: bool,
    /// Align with a yaw rotation and translation only.
    #[arg(long, conflicts_with = "no_align")]
    yaw_only: bool,
    /// RPE segment length, m.
    #[arg(long)]
    rpe_delta: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    estimator: String,
    dataset: String,
    seed: Option<u64>,
    config_hash: String,
    contact_source: ContactSource,
    gamma: f64,
    timing: Timing,
    updates: usize,
    gated_updates: usize,
    metrics: Option<MetricReport>,
}

#[derive(Debug, Serialize)]
struct OutputFile {
    path: String,
    /// Absent for files holding wall-clock measurements.
    #[serde(skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

#[derive(Debug, Serialize)]
struct OutputManifest {
    command: &'static str,
    files: Vec<OutputFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_manifest(dir: &Path, command: &'static str, files: &[&str]) -> Result<()> {
    let mut entries = Vec::new();
    for f in files {
        let path = dir.join(f);
        let sha256 = if *f == SUMMARY {
            None
        } else {
            Some(sha256_hex(&std::fs::read(&path).map_err(io_err(&path))?))
        };
        entries.push(OutputFile {
            path: f.to_string(),
            sha256,
        });
    }
    let manifest = OutputManifest { command, files: entries };
    write_json(&dir.join(OUTPUT_MANIFEST), &manifest)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn config_or_default(path: Option<&Path>, fallback: impl FnOnce() -> RunConfig) -> Result<RunConfig> {
    let cfg = match path {
        // An unreadable configuration is a configuration error too.
        Some(p) => load_config(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            e => e,
        })?,
        None => fallback(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn config_hash(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(cfg.to_toml()?.as_bytes()))
}

fn simulate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let sim = simulate(&cfg.sim_config())?;
    let name = format!("sim-seed{}", cfg.gait.seed);
    Ok(Dataset::from_sim(&name, &sim, Some(cfg.clone()), cfg.gait.fs))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = config_or_default(a.config.as_deref(), || RunConfig::new(4))?;
    if let Some(s) = a.seed {
        cfg.gait.seed = s;
    }
    let ds = simulate_dataset(&cfg)?;
    write_dataset(&a.out, &ds)?;
    Ok(())
}

fn run_one(ds: &Dataset, cfg: &RunConfig, kind: EstimatorKind, align: AlignMode, seed: Option<u64>, out: &Path) -> Result<()> {
    create_dir(out)?;
    let output = run_estimator(ds, cfg, kind)?;
    write_state_log(out.join("trajectory.csv"), &output.records)?;
    write_event_log(out.join("events.csv"), &output.events)?;
    let reference = match kind {
        EstimatorKind::FootIns(i) => ds.leg_truth.get(i),
        _ => ds.truth.as_ref(),
    };
    let mut files = vec!["trajectory.csv", "events.csv"];
    let metrics = match reference {
        Some(r) => {
            let opts = EvalOptions {
                align,
                rpe_delta: cfg.run.rpe_delta,
                ..EvalOptions::default()
            };
            let est = doglegs::dataset_io::output::states_to_track(&output.records);
            let (report, errors) = evaluate(&est, r, &opts)?;
            write_errors(&out.join("pose_errors.csv"), &errors)?;
            files.push("pose_errors.csv");
            Some(report)
        }
        None => None,
    };
    let summary = RunSummary {
        estimator: kind.to_string(),
        dataset: ds.name.clone(),
        seed,
        config_hash: config_hash(cfg)?,
        contact_source: output.plan.source,
        gamma: output.plan.gamma,
        timing: output.timing,
        updates: output.events.len(),
        gated_updates: output.events.iter().filter(|e| !e.accepted).count(),
        metrics,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    files.push(SUMMARY);
    write_manifest(out, "run", &files)
}

fn write_errors(path: &Path, errors: &[doglegs::metrics::PoseError]) -> Result<()> {
    let mut buf = Vec::new();
    write_pose_errors(&mut buf, errors).map_err(io_err(path))?;
    std::fs::write(path, buf).map_err(io_err(path))
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let kind = EstimatorKind::parse(&a.estimator)?;
    let align = if a.no_align { AlignMode::None } else { AlignMode::Se3 };
    if a.jobs == 0 || a.runs == 0 {
        return Err(Error::Config("--jobs and --runs must be at least 1".into()));
    }
    if let Some(dir) = &a.dataset {
        if a.runs > 1 {
            return Err(Error::Config("--runs needs simulated data; drop --dataset".into()));
        }
        let ds = load_dataset(dir)?;
        let n = ds.n_legs();
        let cfg = config_or_default(a.config.as_deref(), || ds.config.clone().unwrap_or_else(|| RunConfig::new(n)))?;
        return run_one(&ds, &cfg, kind, align, a.seed, &a.out);
    }
    let base = config_or_default(a.config.as_deref(), || RunConfig::new(4))?;
    let first = a.seed.unwrap_or(base.gait.seed);
    let seeds: Vec<u64> = (first..first + a.runs).collect();
    let one = |seed: u64| -> Result<()> {
        let mut cfg = base.clone();
        cfg.gait.seed = seed;
        let ds = simulate_dataset(&cfg)?;
        let out = if a.runs == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("seed_{seed}"))
        };
        run_one(&ds, &cfg, kind, align, Some(seed), &out)
    };
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                if let Err(e) = one(seed) {
                    first_error.lock().expect("poisoned").get_or_insert(e);
                    break;
                }
            });
        }
    });
    match first_error.into_inner().expect("poisoned") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let est: PoseTrack = read_trajectory(&a.estimate)?;
    let reference: PoseTrack = read_trajectory(&a.reference)?;
    let align = match (a.no_align, a.yaw_only) {
        (true, _) => AlignMode::None,
        (_, true) => AlignMode::YawOnly,
        _ => AlignMode::Se3,
    };
    let mut opts = EvalOptions {
        align,
        ..EvalOptions::default()
    };
    if let Some(d) = a.rpe_delta {
        if !(d > 0.0) {
            return Err(Error::Config("--rpe-delta must be positive".into()));
        }
        opts.rpe_delta = d;
    }
    let (report, errors) = evaluate(&est, &reference, &opts)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    write_errors(&a.out.join("pose_errors.csv"), &errors)?;
    write_manifest(&a.out, "eval", &["metrics.json", "pose_errors.csv"])
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let n = ds.n_legs();
    let mut cfg = config_or_default(a.config.as_deref(), || ds.config.clone().unwrap_or_else(|| RunConfig::new(n)))?;
    cfg.run.contact = ContactSource::Glrt;
    let aligned = align_epochs(&ds)?;
    let plan = contact_plan(&aligned, &cfg)?;
    let times: Vec<f64> = aligned.iter().map(|s| s.body.t).collect();
    create_dir(&a.out)?;
    let path = a.out.join("contacts.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["leg_id", "t_start", "t_end"])?;
    for leg in 0..n {
        let flags: Vec<bool> = plan.flags.iter().map(|f| f[leg]).collect();
        for (t0, t1) in contact_intervals(&times, &flags) {
            w.write_record([leg.to_string(), format!("{t0:.6}"), format!("{t1:.6}")])?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    write_manifest(&a.out, "detect-contact", &["contacts.csv"])
}

#[derive(Serialize)]
struct ErrorReport {
    kind: &'static str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DetectContact(a) => cmd_detect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if e.is_config() { ("config", 2) } else { ("runtime", 1) };
            let report = ErrorReport {
                kind,
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&report).expect("serializable"));
            ExitCode::from(code)
        }
    }
}
