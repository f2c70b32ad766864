//! `aoi-sched`: train, evaluate and compare AoI schedulers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use aoi_sched::config::RunConfig;
use aoi_sched::eval::{self, Metrics};
use aoi_sched::nn::Checkpoint;
use aoi_sched::schedulers::{Scheduler, SelectMode};
use aoi_sched::traces::{self, Trace};
use aoi_sched::train;
use aoi_sched::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aoi-sched", version, about = "Age-of-Information scheduling simulator")]
struct Cli {
    /// Run configuration (JSON). Without it the reference preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy over the full entropy schedule.
    Train(TrainArgs),
    /// Evaluate one scheduler on the evaluation traces.
    Eval(EvalArgs),
    /// Build the normalized comparison table from eval outputs.
    Compare(CompareArgs),
    /// Write the synthetic training and evaluation trace sets.
    GenTraces(GenArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    workers: Option<usize>,
    /// Training trace directory.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerArg {
    Edf,
    Osrp,
    Rl,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    scheduler: SchedulerArg,
    /// Checkpoint for `--scheduler rl`.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Action selection for `rl`; defaults to the configuration's mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Evaluation trace directory.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Output directories of earlier `eval` runs.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Scheduler name the objectives are normalized by.
    #[arg(long, default_value = "RL")]
    reference: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Root directory; sets go to `<out>/train` and `<out>/eval`.
    /// Defaults to the configured trace paths.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Shape(_) | Error::HashMismatch { .. } => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure {
                code: 2,
                message: e.to_string(),
            },
            other => other.into(),
        })?,
        None => RunConfig::paper(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_traces(dir: &Path) -> CliResult<Vec<Arc<Trace>>> {
    Ok(traces::load_trace_dir(dir)?.into_iter().map(Arc::new).collect())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CliResult {
    let mut cfg = load_config(cli)?;
    if let Some(w) = args.workers {
        cfg.train.workers = w;
    }
    cfg.validate()?;
    let env_config = cfg.env_config()?;
    let trace_dir = args.traces.clone().unwrap_or_else(|| cfg.paths.traces.clone());
    let traces = load_traces(&trace_dir)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
    log::info!("training on {} traces from {}", traces.len(), trace_dir.display());

    let result = train::train(&env_config, &traces, &cfg.train_config());
    create_dir(&out)?;
    let (outcome, failure) = match result {
        Ok(outcome) => (outcome, None),
        Err(f) => {
            if let Some(good) = &f.last_good {
                write_file(&out.join("ckpt_last_good.json"), good.to_json()?.as_bytes())?;
            }
            let message = f.to_string();
            (f.partial, Some(message))
        }
    };
    for ck in &outcome.checkpoints {
        let path = out.join(format!("ckpt_stage{}.json", ck.meta.entropy_stage));
        write_file(&path, ck.to_json()?.as_bytes())?;
    }
    let mut curve = Vec::new();
    train::write_learning_curve(&outcome.log, &mut curve)?;
    write_file(&out.join("learning_curve.csv"), &curve)?;
    match failure {
        Some(message) => Err(Failure { code: 3, message }),
        None => {
            log::info!("wrote {} checkpoints to {}", outcome.checkpoints.len(), out.display());
            Ok(())
        }
    }
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> CliResult {
    let cfg = load_config(cli)?;
    cfg.validate()?;
    let env_config = cfg.env_config()?;
    let scheduler = match args.scheduler {
        SchedulerArg::Edf => Scheduler::edf(env_config.thresholds()),
        SchedulerArg::Osrp => Scheduler::osrp(&env_config.thresholds())?,
        SchedulerArg::Rl => {
            let path = args
                .policy
                .as_ref()
                .ok_or_else(|| config_error("--scheduler rl requires --policy <checkpoint>"))?;
            let ck = Checkpoint::load(path)?;
            ck.check_compatible(env_config.num_sensors(), env_config.history_len, &env_config.config_hash())?;
            let mode = match args.mode {
                Some(ModeArg::Greedy) => SelectMode::Greedy,
                Some(ModeArg::Sample) => SelectMode::Sample,
                None => cfg.eval.mode,
            };
            Scheduler::policy(ck.actor, ck.meta.norm, mode)
        }
    };
    let trace_dir = args.traces.clone().unwrap_or_else(|| cfg.paths.eval_traces.clone());
    let traces = load_traces(&trace_dir)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
    let metrics = eval::evaluate(&scheduler, &env_config, &traces, &cfg.eval_config())?;
    log::info!(
        "{}: objective {:.3} (AoI term {:.3}, penalty term {:.3})",
        metrics.scheduler,
        metrics.objective,
        metrics.aoi_term,
        metrics.penalty_term
    );

    create_dir(&out)?;
    let mut buf = Vec::new();
    eval::write_metrics_csv(std::slice::from_ref(&metrics), &mut buf)?;
    write_file(&out.join("metrics.csv"), &buf)?;
    let mut buf = Vec::new();
    eval::compare(std::slice::from_ref(&metrics), &metrics.scheduler)?.write_summary(&mut buf)?;
    write_file(&out.join("summary.csv"), &buf)?;
    let mut buf = Vec::new();
    eval::write_cdf_csv(&metrics, &mut buf)?;
    write_file(&out.join("cdf.csv"), &buf)?;
    write_file(&out.join("metrics.json"), metrics.to_json()?.as_bytes())?;
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?)
}

fn cmd_compare(args: &CompareArgs) -> CliResult {
    let mut entries: Vec<Metrics> = Vec::new();
    let mut cdfs = Vec::new();
    for dir in &args.inputs {
        entries.push(Metrics::from_json(&read_text(&dir.join("metrics.json"))?)?);
        cdfs.push(eval::read_cdf_csv(read_text(&dir.join("cdf.csv"))?.as_bytes())?);
    }
    let report = eval::compare(&entries, &args.reference)?;
    create_dir(&args.out)?;
    let mut buf = Vec::new();
    report.write_table(&mut buf)?;
    write_file(&args.out.join("table.csv"), &buf)?;
    let mut buf = Vec::new();
    report.write_summary(&mut buf)?;
    write_file(&args.out.join("summary.csv"), &buf)?;
    let mut buf = Vec::new();
    eval::write_metrics_csv(&entries, &mut buf)?;
    write_file(&args.out.join("metrics.csv"), &buf)?;
    for sensor in 0..entries[0].num_sensors() {
        let mut text = String::from("scheduler,aoi_ms,cdf\n");
        for (m, rows) in entries.iter().zip(&cdfs) {
            for r in rows.iter().filter(|r| r.sensor == sensor) {
                text.push_str(&format!("{},{},{}\n", m.scheduler, r.aoi_ms, r.cdf));
            }
        }
        write_file(&args.out.join(format!("cdf_sensor{sensor}.csv")), text.as_bytes())?;
    }
    Ok(())
}

fn cmd_gen_traces(cli: &Cli, args: &GenArgs) -> CliResult {
    let cfg = load_config(cli)?;
    cfg.validate()?;
    let (train_dir, eval_dir) = match &args.out {
        Some(root) => (root.join("train"), root.join("eval")),
        None => (cfg.paths.traces.clone(), cfg.paths.eval_traces.clone()),
    };
    let s = cfg.synthetic;
    for (dir, count, prefix) in [(&train_dir, s.train_count, "train"), (&eval_dir, s.eval_count, "eval")] {
        create_dir(dir)?;
        for i in 0..count {
            let seed = if prefix == "train" {
                s.train_seed(cfg.seed, i)
            } else {
                s.eval_seed(cfg.seed, i)
            };
            let trace = traces::gen_synthetic(s.kind, s.duration_ms, s.step_ms, seed)?;
            traces::save_trace(&trace, dir.join(format!("{prefix}_{i:03}.csv")))?;
        }
        log::info!("wrote {count} traces to {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AOI_SCHED_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Compare(a) => cmd_compare(a),
        Command::GenTraces(a) => cmd_gen_traces(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
