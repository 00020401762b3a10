//! Command front end: `train`, `eval`, `study`, `replay` and `gen-data`.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 usage or
//! configuration error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::eval::{self, EvalReport, ExportFormat};
use crate::logs::{self, TrajectoryRecord};
use crate::policy::PolicyParams;
use crate::reward::BudgetRule;
use crate::taskgen::{self, BudgetLevel, LevelMode};
use crate::trainer::{
    train_loop, Checkpoint, LoopOutcome, StepMetrics, StepObserver, StepOutcome, TrainError, TrainState,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const EVAL_TRAJECTORIES_FILE: &str = "eval_trajectories.jsonl";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Parser)]
#[command(name = "corl", version, about = "Cost-controllable controller/expert routing lab")]
pub struct Cli {
    /// JSON run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides output.out_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides trainer.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps rollout threads; overrides workers.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a controller and write metrics, checkpoints and trajectories.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out split at each budget level.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated subset of low, medium, high; overrides eval.levels.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<String>>,
        /// Rollouts per test task; overrides eval.n_samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train one fixed-budget run per budget and join their metrics.
    Study {
        /// Comma-separated dollar budgets, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<f64>,
    },
    /// Recompute costs and rewards of a trajectory log and report mismatches.
    Replay {
        /// A trajectories.jsonl or eval_trajectories.jsonl file.
        log: PathBuf,
    },
    /// Write the train and test splits as JSONL.
    GenData,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("config error: {e}"))
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train { resume } => {
            let cfg = effective_config(cli)?;
            let dir = prepare_out_dir(cli, &cfg)?;
            let outcome = train_run(&cfg, &dir, resume.as_deref())?;
            match outcome.aborted {
                None => {
                    println!("trained {} steps into {}", outcome.state.step, dir.display());
                    Ok(())
                }
                Some(e) => Err(runtime(format!(
                    "training stopped after step {}: {e}",
                    outcome.state.step
                ))),
            }
        }
        Command::Eval {
            checkpoint,
            levels,
            samples,
        } => {
            let mut cfg = effective_config(cli)?;
            if let Some(levels) = levels {
                cfg.eval.levels = parse_levels(levels)?;
            }
            if let Some(n) = samples {
                if *n == 0 {
                    return Err(CliError::Usage("--samples must be at least 1".into()));
                }
                cfg.eval.n_samples = *n;
            }
            if !checkpoint.is_file() {
                return Err(CliError::Usage(format!("checkpoint {} not found", checkpoint.display())));
            }
            let dir = prepare_out_dir(cli, &cfg)?;
            let report = eval_run(&cfg, checkpoint, &dir)?;
            for (level, r) in &report.levels {
                println!(
                    "{level}: accuracy {:.4}, cost/query ${:.6}, call ratios {:?}",
                    r.accuracy, r.cost_per_query, r.call_ratios
                );
            }
            Ok(())
        }
        Command::Study { budgets } => {
            if budgets.len() < 2 {
                return Err(CliError::Usage("study needs at least two budgets".into()));
            }
            if budgets.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                return Err(CliError::Usage("budgets must be positive".into()));
            }
            let cfg = effective_config(cli)?;
            let dir = prepare_out_dir(cli, &cfg)?;
            study_run(&cfg, budgets, &dir)?;
            println!("study written to {}", dir.display());
            Ok(())
        }
        Command::Replay { log } => {
            let cfg = match &cli.config {
                Some(_) => effective_config(cli)?,
                None => {
                    let beside = log.parent().map(|p| p.join(CONFIG_FILE));
                    match beside.filter(|p| p.is_file()) {
                        Some(p) => RunConfig::load(&p)?,
                        None => RunConfig::default(),
                    }
                }
            };
            let summary = replay_log(&cfg, log)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            if summary.mismatches.is_empty() {
                Ok(())
            } else {
                for m in &summary.mismatches {
                    eprintln!("{m}");
                }
                Err(CliError::Runtime(format!(
                    "{} mismatching line(s) in {}",
                    summary.mismatches.len(),
                    log.display()
                )))
            }
        }
        Command::GenData => {
            let cfg = effective_config(cli)?;
            let dir = prepare_out_dir(cli, &cfg)?;
            let dataset = taskgen::generate(&cfg.dataset_spec()).map_err(|e| CliError::Usage(e.to_string()))?;
            write_config(&cfg, &dir)?;
            for (name, tasks) in [("train.jsonl", &dataset.train), ("test.jsonl", &dataset.test)] {
                let path = dir.join(name);
                let file = File::create(&path).map_err(io_at(&path))?;
                taskgen::write_jsonl(tasks, BufWriter::new(file)).map_err(runtime)?;
            }
            println!(
                "wrote {} train and {} test tasks to {}",
                dataset.train.len(),
                dataset.test.len(),
                dir.display()
            );
            Ok(())
        }
    }
}

/// Loads `--config` (or the defaults) and applies the global flag overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.trainer.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(out) = &cli.out {
        cfg.output.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg.effective())
}

pub fn parse_levels(names: &[String]) -> Result<Vec<BudgetLevel>, CliError> {
    let mut out = Vec::new();
    for n in names {
        let level: BudgetLevel = n
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown budget level '{n}' (expected low, medium or high)")))?;
        if !out.contains(&level) {
            out.push(level);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no budget levels given".into()));
    }
    Ok(out)
}

fn prepare_out_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .output
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory (pass --out or set output.out_dir)".into()))?;
    ensure_empty_dir(&dir, cli.force)?;
    Ok(dir)
}

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn ensure_empty_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_at(dir))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_pretty_json() + "\n").map_err(io_at(&path))
}

/// Streams run artifacts while training proceeds.
struct RunWriter {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    header_written: bool,
    config_hash: String,
    checkpoint_every: u64,
    log_every: u64,
    max_steps: u64,
    trajectories: BufWriter<File>,
}

impl RunWriter {
    fn new(cfg: &RunConfig, dir: &Path) -> Result<Self, CliError> {
        let metrics_path = dir.join(METRICS_FILE);
        let traj_path = dir.join(TRAJECTORIES_FILE);
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(File::create(&metrics_path).map_err(io_at(&metrics_path))?),
            header_written: false,
            config_hash: cfg.hash(),
            checkpoint_every: cfg.output.checkpoint_every,
            log_every: cfg.output.trajectory_log_every,
            max_steps: cfg.trainer.max_steps,
            trajectories: BufWriter::new(File::create(&traj_path).map_err(io_at(&traj_path))?),
        })
    }

    fn write_step(&mut self, state: &TrainState, outcome: &StepOutcome) -> Result<(), String> {
        let m = &outcome.metrics;
        if !self.header_written {
            let n_experts = m.call_ratios.len().saturating_sub(1);
            self.metrics
                .write_record(StepMetrics::csv_header(n_experts))
                .map_err(|e| e.to_string())?;
            self.header_written = true;
        }
        self.metrics.write_record(m.csv_row()).map_err(|e| e.to_string())?;
        self.metrics.flush().map_err(|e| e.to_string())?;

        let step = m.step;
        if step == self.max_steps || (self.log_every > 0 && step % self.log_every == 0) {
            logs::write_records(&outcome.records, &mut self.trajectories).map_err(|e| e.to_string())?;
            self.trajectories.flush().map_err(|e| e.to_string())?;
        }
        if self.checkpoint_every > 0 && step % self.checkpoint_every == 0 {
            Checkpoint::from_state(state, &self.config_hash)
                .save(&self.dir.join(format!("checkpoint_step{step:06}.json")))
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

impl StepObserver for RunWriter {
    fn on_step(&mut self, state: &TrainState, outcome: &StepOutcome) -> Result<(), TrainError> {
        self.write_step(state, outcome).map_err(TrainError::Sink)
    }
}

/// Trains `cfg` into `dir` (which must exist), optionally resuming.
///
/// Writes `config.json`, `metrics.csv`, `trajectories.jsonl`, periodic and
/// final checkpoints, and the smoothed reward and price series.
pub fn train_run(cfg: &RunConfig, dir: &Path, resume: Option<&Path>) -> Result<LoopOutcome, CliError> {
    let cfg = cfg.effective();
    let lab = cfg.build_lab()?;
    let state = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
            ckpt.check_config(&cfg.hash()).map_err(|e| CliError::Usage(e.to_string()))?;
            ckpt.into_state().map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => TrainState::new(lab.vocab, &cfg.policy, &cfg.trainer),
    };
    write_config(&cfg, dir)?;
    let mut writer = RunWriter::new(&cfg, dir)?;
    let outcome = train_loop(state, &lab, &cfg.trainer, &mut writer);
    Checkpoint::from_state(&outcome.state, &cfg.hash())
        .save(&dir.join(CHECKPOINT_FILE))
        .map_err(runtime)?;
    let window = cfg.output.smoothing_window;
    eval::export(
        &eval::reward_dynamics_series(&outcome.history, window),
        &dir.join("reward_series.csv"),
        ExportFormat::Csv,
    )
    .map_err(runtime)?;
    eval::export(
        eval::price_series(&outcome.history, window).as_slice(),
        &dir.join("price_series.csv"),
        ExportFormat::Csv,
    )
    .map_err(runtime)?;
    Ok(outcome)
}

/// Evaluates a checkpoint and writes the JSON report, its CSV view and the
/// scored evaluation log into `dir`.
pub fn eval_run(cfg: &RunConfig, checkpoint: &Path, dir: &Path) -> Result<EvalReport, CliError> {
    let lab = cfg.build_lab()?;
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| CliError::Usage(e.to_string()))?;
    ckpt.check_config(&cfg.hash()).map_err(|e| CliError::Usage(e.to_string()))?;
    let policy: PolicyParams = ckpt.into_state().map_err(|e| CliError::Usage(e.to_string()))?.policy;
    let (report, records) = eval::evaluate(&policy, &lab.dataset.test, &lab, &cfg.eval).map_err(runtime)?;
    write_config(cfg, dir)?;
    let path = dir.join(EVAL_REPORT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
        .map_err(io_at(&path))?;
    eval::export(&report, &dir.join("eval_report.csv"), ExportFormat::Csv).map_err(runtime)?;
    let path = dir.join(EVAL_TRAJECTORIES_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    logs::write_records(&records, &mut out).map_err(runtime)?;
    out.flush().map_err(io_at(&path))?;
    Ok(report)
}

/// Directory name of the study run for `budget`.
pub fn study_run_dir(index: usize, budget: f64) -> String {
    format!("run{index}_budget_{budget}")
}

/// One fixed-budget training run per budget, sharing the seed, plus a
/// step-aligned `comparison.csv`.
pub fn study_run(cfg: &RunConfig, budgets: &[f64], dir: &Path) -> Result<Vec<Vec<StepMetrics>>, CliError> {
    write_config(cfg, dir)?;
    let mut histories = Vec::new();
    for (i, &b) in budgets.iter().enumerate() {
        let mut run_cfg = cfg.clone();
        run_cfg.fixed_budget = Some(b);
        run_cfg.trainer.level_mode = LevelMode::Fixed(BudgetLevel::Medium);
        run_cfg.validate()?;
        let run_dir = dir.join(study_run_dir(i, b));
        ensure_empty_dir(&run_dir, true)?;
        let outcome = train_run(&run_cfg, &run_dir, None)?;
        if let Some(e) = outcome.aborted {
            return Err(runtime(format!("run with budget {b} stopped: {e}")));
        }
        histories.push(outcome.history);
    }
    write_comparison(&dir.join(COMPARISON_FILE), budgets, &histories)?;
    Ok(histories)
}

/// Joins per-run metrics on `step`; each column is prefixed `b<index>_`.
pub fn write_comparison(path: &Path, budgets: &[f64], histories: &[Vec<StepMetrics>]) -> Result<(), CliError> {
    let n_experts = histories
        .iter()
        .flatten()
        .next()
        .map_or(0, |m| m.call_ratios.len().saturating_sub(1));
    let per_run = StepMetrics::csv_header(n_experts);
    let mut header = vec!["step".to_string()];
    for i in 0..budgets.len() {
        header.push(format!("b{i}_budget"));
        header.extend(per_run[1..].iter().map(|h| format!("b{i}_{h}")));
    }
    let mut by_step: BTreeMap<u64, Vec<Option<&StepMetrics>>> = BTreeMap::new();
    for (i, h) in histories.iter().enumerate() {
        for m in h {
            by_step.entry(m.step).or_insert_with(|| vec![None; histories.len()])[i] = Some(m);
        }
    }
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(&header).map_err(runtime)?;
    for (step, row) in by_step {
        let mut rec = vec![step.to_string()];
        for (i, m) in row.iter().enumerate() {
            rec.push(budgets[i].to_string());
            match m {
                Some(m) => rec.extend(m.csv_row().into_iter().skip(1)),
                None => rec.extend(std::iter::repeat_n(String::new(), per_run.len() - 1)),
            }
        }
        w.write_record(&rec).map_err(runtime)?;
    }
    w.flush().map_err(io_at(path))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LevelTotals {
    pub n: usize,
    pub cost_total: f64,
    pub accuracy: f64,
    pub mean_r_phi: f64,
}

/// What `replay` found in a log.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub lines: usize,
    pub levels: BTreeMap<String, LevelTotals>,
    pub mismatches: Vec<String>,
}

/// Audits every line of a trajectory log against `cfg`'s prices and budgets.
pub fn replay_log(cfg: &RunConfig, log: &Path) -> Result<ReplaySummary, CliError> {
    let file = File::open(log).map_err(|e| CliError::Usage(format!("{}: {e}", log.display())))?;
    let records: Vec<TrajectoryRecord> =
        logs::read_records(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", log.display())))?;
    let prices = cfg.prices();
    let rule: BudgetRule = cfg.budget_rule();
    let vocab = cfg.vocabulary();
    let mut summary = ReplaySummary {
        lines: records.len(),
        ..Default::default()
    };
    for (i, rec) in records.iter().enumerate() {
        for m in logs::audit_record(rec, &prices, Some(&rule), Some(&vocab)) {
            summary.mismatches.push(format!(
                "line {}: {} logged {} but recomputed {}",
                i + 1,
                m.field,
                m.logged,
                m.recomputed
            ));
        }
        let level = rec.trajectory.budget_level.map_or("none".to_string(), |l| l.to_string());
        let t = summary.levels.entry(level).or_default();
        t.n += 1;
        t.cost_total += crate::reward::trajectory_cost(&rec.trajectory, &prices).unwrap_or(f64::NAN);
        t.accuracy += f64::from(u8::from(rec.trajectory.final_answer == Some(rec.trajectory.answer)));
        if let Some(r) = rec.reward {
            t.mean_r_phi += f64::from(r.r_phi);
        }
    }
    for t in summary.levels.values_mut() {
        t.accuracy /= t.n as f64;
        t.mean_r_phi /= t.n as f64;
    }
    Ok(summary)
}
