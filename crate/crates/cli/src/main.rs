//! `fastgate`: tabulate gates, run the toy learning problem, train gated
//! recurrent networks and read off their time scales.
//!
//! Every command first writes a manifest holding its fully resolved
//! configuration; `fastgate replay <manifest>` re-runs it.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastgate::dynamics::Method;
use fastgate::nn::{CellKind, InitScheme};
use fastgate::train::{runs_root, OptimizerConfig, TaskConfig, TrainConfig};
use fastgate::GateKind;

use commands::{GatesConfig, TimescalesConfig, ToyFitConfig, ToyRunConfig, TrainRun};
use manifest::{resolve, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "aborted: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "fastgate", version, about = "Fast-saturating gates for learning long time scales")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate gate values, derivatives and complements over a grid.
    Gates(GatesArgs),
    /// The scalar long-time-scale learning problem.
    Toy {
        #[command(subcommand)]
        command: ToyCommand,
    },
    /// Train a gated recurrent network on a long-memory task.
    Train {
        #[command(subcommand)]
        task: TrainTask,
    },
    /// Per-unit forget-gate time scales of a checkpoint.
    Timescales(TimescalesArgs),
    /// Re-run the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

fn parse_gate(s: &str) -> Result<GateKind, String> {
    s.parse().map_err(|e: fastgate::gates::GateError| e.to_string())
}

fn parse_cell(s: &str) -> Result<CellKind, String> {
    s.parse().map_err(|e: fastgate::nn::NnError| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fastgate::dynamics::DynamicsError| e.to_string())
}

#[derive(Args)]
struct GatesArgs {
    /// Gate names, comma separated: sigmoid, softsign, fast, iterfast.
    #[arg(long, value_delimiter = ',', value_parser = parse_gate)]
    gate: Vec<GateKind>,
    #[arg(long, allow_hyphen_values = true)]
    zmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    zmax: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with defaults; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Integrate gradient flow or run a discrete optimizer; writes the trajectory CSV.
    Run(ToyRunArgs),
    /// Fit the convergence-rate bound to the saturated tail of a trajectory CSV.
    FitBound(ToyFitArgs),
}

#[derive(Args)]
struct ToyRunArgs {
    #[arg(long, value_parser = parse_gate)]
    gate: Option<GateKind>,
    /// Use the refine construction over the gate.
    #[arg(long)]
    refine: bool,
    /// flow, gd, rmsprop or adam.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    lambda_star: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tau_end: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ToyFitArgs {
    /// Trajectory CSV written by `toy run`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_gate)]
    gate: Option<GateKind>,
    #[arg(long)]
    refine: bool,
    /// Method that produced the trajectory.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    tau_lo: Option<f64>,
    #[arg(long)]
    tau_hi: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TrainTask {
    /// Adding problem: regress the sum of the two marked values.
    Adding {
        /// Sequence length [default: 200].
        #[arg(long)]
        length: Option<usize>,
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Copy task: reproduce ten symbols after a delay.
    Copy {
        /// Delay between the payload and its recall [default: 100].
        #[arg(long)]
        length: Option<usize>,
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Pixel-by-pixel MNIST from IDX files.
    Mnist {
        #[arg(long, value_enum)]
        permute: Option<Permute>,
        /// Use only the first N training samples.
        #[arg(long)]
        subsample: Option<usize>,
        /// Directory holding the IDX files [default: data/mnist].
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        common: TrainArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Permute {
    None,
    Bitreversal,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerName {
    Sgd,
    Rmsprop,
    Adam,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitName {
    Default,
    Chrono,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_parser = parse_gate)]
    gate: Option<GateKind>,
    /// tied-lstm, lstm, gru or janet.
    #[arg(long, value_parser = parse_cell)]
    cell: Option<CellKind>,
    #[arg(long)]
    refine: bool,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerName>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long, value_enum)]
    init: Option<InitName>,
    /// Largest chrono time scale; defaults to the sequence length.
    #[arg(long)]
    t_max: Option<f64>,
    /// Record elapsed milliseconds in the metrics.
    #[arg(long)]
    wall_clock: bool,
    /// Output directory; defaults to `$FASTGATE_RUNS_DIR/<name>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// Train one run per seed, each in `<run dir>/seed-<s>`.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Vec<u64>,
    /// Worker processes for `--seeds`.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// JSON training config (as written to `config.json`); flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TimescalesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn gates_config(a: GatesArgs) -> Result<GatesConfig, CliError> {
    let mut c = resolve(&GatesConfig::default(), a.config.as_deref())?;
    if !a.gate.is_empty() {
        c.gates = a.gate;
    }
    c.zmin = a.zmin.unwrap_or(c.zmin);
    c.zmax = a.zmax.unwrap_or(c.zmax);
    c.step = a.step.unwrap_or(c.step);
    c.out = a.out.or(c.out);
    Ok(c)
}

fn toy_run_config(a: ToyRunArgs) -> Result<ToyRunConfig, CliError> {
    let mut c = resolve(&ToyRunConfig::default(), a.config.as_deref())?;
    c.gate = a.gate.unwrap_or(c.gate);
    c.refine |= a.refine;
    c.method = a.method.unwrap_or(c.method);
    c.horizon = a.horizon.unwrap_or(c.horizon);
    c.lambda_star = a.lambda_star.unwrap_or(c.lambda_star);
    c.lr = a.lr.or(c.lr);
    c.steps = a.steps.or(c.steps);
    c.tau_end = a.tau_end.or(c.tau_end);
    c.rel_tol = a.rel_tol.or(c.rel_tol);
    c.out = a.out.or(c.out);
    c.finalize()
}

fn toy_fit_config(a: ToyFitArgs) -> Result<ToyFitConfig, CliError> {
    let mut c = resolve(&ToyFitConfig::default(), a.config.as_deref())?;
    c.input = a.input.or(c.input);
    c.gate = a.gate.unwrap_or(c.gate);
    c.refine |= a.refine;
    c.method = a.method.unwrap_or(c.method);
    c.tau_lo = a.tau_lo.or(c.tau_lo);
    c.tau_hi = a.tau_hi.or(c.tau_hi);
    c.out = a.out.or(c.out);
    Ok(c)
}

/// Defaults, then `--config`, then flags. The cell input size always
/// follows the task.
fn train_config(task: &TrainTask) -> Result<TrainConfig, CliError> {
    let a = task.common();
    let fresh = task.apply(None);
    let mut defaults = TrainConfig::new(fresh.clone(), CellKind::TiedLstm, 128, GateKind::Sigmoid);
    defaults.iterations = 2000;
    let mut c = resolve(&defaults, a.config.as_deref())?;
    c.task = if c.task.name() == fresh.name() { task.apply(Some(&c.task)) } else { fresh };
    c.cell.input_dim = c.task.input_dim();
    c.cell.hidden_dim = a.hidden.unwrap_or(c.cell.hidden_dim);
    c.cell.forget_gate = a.gate.unwrap_or(c.cell.forget_gate);
    c.cell.kind = a.cell.unwrap_or(c.cell.kind);
    c.cell.refine |= a.refine;
    c.iterations = a.iters.unwrap_or(c.iterations);
    c.seed = a.seed.unwrap_or(c.seed);
    c.batch = a.batch.unwrap_or(c.batch);
    c.clip_threshold = a.clip.unwrap_or(c.clip_threshold);
    c.log_every = a.log_every.unwrap_or(c.log_every);
    c.wall_clock |= a.wall_clock;
    let lr = a.lr.unwrap_or(c.optimizer.lr());
    c.optimizer = match a.optimizer {
        Some(OptimizerName::Sgd) => OptimizerConfig::sgd(lr),
        Some(OptimizerName::Rmsprop) => OptimizerConfig::rmsprop(lr),
        Some(OptimizerName::Adam) => OptimizerConfig::adam(lr),
        None => c.optimizer.with_lr(lr),
    };
    let t_max = a.t_max.unwrap_or(c.task.sequence_len() as f64);
    match (a.init, a.t_max) {
        (Some(InitName::Default), Some(_)) => return Err(CliError::Usage("--t-max needs --init chrono".into())),
        (Some(InitName::Default), None) => c.init = InitScheme::Default,
        (Some(InitName::Chrono), _) | (None, Some(_)) => c.init = InitScheme::Chrono { t_max },
        (None, None) => {}
    }
    Ok(c)
}

impl TrainTask {
    fn common(&self) -> &TrainArgs {
        match self {
            TrainTask::Adding { common, .. } | TrainTask::Copy { common, .. } | TrainTask::Mnist { common, .. } => common,
        }
    }

    /// The task flags laid over `base` (a task of the same kind from a
    /// config file) or over the command-line defaults.
    fn apply(&self, base: Option<&TaskConfig>) -> TaskConfig {
        match (self, base) {
            (TrainTask::Adding { length, .. }, Some(TaskConfig::Adding { length: l })) => {
                TaskConfig::Adding { length: length.unwrap_or(*l) }
            }
            (TrainTask::Adding { length, .. }, _) => TaskConfig::Adding { length: length.unwrap_or(200) },
            (TrainTask::Copy { length, .. }, Some(TaskConfig::Copy { length: l })) => {
                TaskConfig::Copy { length: length.unwrap_or(*l) }
            }
            (TrainTask::Copy { length, .. }, _) => TaskConfig::Copy { length: length.unwrap_or(100) },
            (TrainTask::Mnist { permute, subsample, data_dir, .. }, base) => {
                let (p, s, d) = match base {
                    Some(TaskConfig::SeqMnist { permuted, subsample, data_dir }) => (*permuted, *subsample, data_dir.clone()),
                    _ => (false, None, PathBuf::from("data/mnist")),
                };
                TaskConfig::SeqMnist {
                    permuted: permute.map_or(p, |v| v == Permute::Bitreversal),
                    subsample: subsample.or(s),
                    data_dir: data_dir.clone().unwrap_or(d),
                }
            }
        }
    }
}

fn default_name(c: &TrainConfig) -> String {
    let refine = if c.cell.refine { "-refine" } else { "" };
    format!("{}-{}-{}{refine}", c.task.name(), c.cell.kind.name(), c.cell.forget_gate)
}

fn train(task: TrainTask) -> Result<(), CliError> {
    let args = task.common();
    let config = train_config(&task)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let base = match (&args.run_dir, &args.name) {
        (Some(dir), _) => dir.clone(),
        (None, Some(name)) => runs_root().join(name),
        (None, None) if args.seeds.is_empty() => runs_root().join(format!("{}-s{}", default_name(&config), config.seed)),
        (None, None) => runs_root().join(default_name(&config)),
    };
    if args.seeds.is_empty() {
        return commands::train(&TrainRun { train: config, run_dir: base });
    }
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let mut manifests = Vec::new();
    for &seed in &args.seeds {
        let run = TrainRun { train: TrainConfig { seed, ..config.clone() }, run_dir: base.join(format!("seed-{seed}")) };
        let path = run.manifest_path();
        run.manifest()?.write(&path)?;
        manifests.push(path);
    }
    sweep(&manifests, args.jobs)
}

/// Replays each manifest in a worker process, at most `jobs` at a time.
fn sweep(manifests: &[PathBuf], jobs: usize) -> Result<(), CliError> {
    let exe = std::env::current_exe().map_err(|e| CliError::Io(format!("cannot locate executable: {e}")))?;
    let mut pending = manifests.iter();
    let mut running = Vec::new();
    let mut failed = Vec::new();
    loop {
        while running.len() < jobs {
            let Some(m) = pending.next() else { break };
            let child = std::process::Command::new(&exe)
                .arg("replay")
                .arg(m)
                .spawn()
                .map_err(|e| CliError::Io(format!("cannot start worker: {e}")))?;
            running.push((m, child));
        }
        if running.is_empty() {
            break;
        }
        let (m, mut child) = running.remove(0);
        let status = child.wait().map_err(|e| CliError::Io(format!("worker for {}: {e}", m.display())))?;
        if !status.success() {
            failed.push((m.clone(), status.code().unwrap_or(3)));
        }
    }
    match failed.first() {
        None => Ok(()),
        Some(&(_, code)) => {
            let list: Vec<String> = failed.iter().map(|(m, c)| format!("{} (exit {c})", m.display())).collect();
            let msg = format!("{} of {} runs failed: {}", failed.len(), manifests.len(), list.join(", "));
            Err(match code {
                2 => CliError::Usage(msg),
                4 => CliError::Io(msg),
                _ => CliError::Runtime(msg),
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gates(a) => commands::gates(&gates_config(a)?),
        Command::Toy { command: ToyCommand::Run(a) } => commands::toy_run(&toy_run_config(a)?),
        Command::Toy { command: ToyCommand::FitBound(a) } => commands::toy_fit(&toy_fit_config(a)?),
        Command::Train { task } => train(task),
        Command::Timescales(a) => commands::timescales(&TimescalesConfig { checkpoint: a.checkpoint, out: a.out }),
        Command::Replay { manifest } => commands::replay(&RunManifest::read(&manifest)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fastgate: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
