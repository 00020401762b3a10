//! Expert-call ratios, held-out evaluation with repeated sampling, metric
//! series, and CSV / JSONL export.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::logs::TrajectoryRecord;
use crate::policy::PolicyParams;
use crate::rollout::Trajectory;
use crate::seeding;
use crate::taskgen::{annotate_budget, BudgetLevel, Task};
use crate::trainer::{Lab, StepMetrics, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot compute ratios over zero trajectories")]
    Empty,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed table: {0}")]
    Table(String),
}

/// Share of trajectories whose first routed action is each expert; the last
/// entry is the share answering without any call.
pub fn call_ratio(trajectories: &[Trajectory], n_experts: usize) -> Result<Vec<f64>, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = vec![0usize; n_experts + 1];
    for t in trajectories {
        counts[t.first_expert().unwrap_or(n_experts)] += 1;
    }
    let n = trajectories.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Share of all free decisions going to each expert; the last entry counts
/// direct answers. Forced final answers are not decisions and are skipped.
pub fn per_call_ratio(trajectories: &[Trajectory], n_experts: usize) -> Result<Vec<f64>, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = vec![0usize; n_experts + 1];
    for t in trajectories {
        for c in &t.expert_calls {
            counts[c.expert_index] += 1;
        }
        if !t.forced_answer && t.final_answer.is_some() {
            counts[n_experts] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(vec![0.0; n_experts + 1]);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub accuracy: f64,
    pub cost_per_query: f64,
    pub cost_total: f64,
    pub call_ratios: Vec<f64>,
    pub per_call_ratios: Vec<f64>,
    pub mean_r_phi: f64,
    pub n_tasks: usize,
    pub n_samples: usize,
    /// Mean of the binary outcomes of each task's samples, in test order.
    pub per_task_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub levels: BTreeMap<BudgetLevel, LevelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub levels: Vec<BudgetLevel>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            levels: BudgetLevel::ALL.to_vec(),
            seed: 0,
        }
    }
}

/// Rolls out every test task `n_samples` times at each requested level.
///
/// Sample `s` of task `i` at level `l` uses generator `(seed, eval, l, i, s)`,
/// so reports are reproducible. Returns the report and the scored log.
pub fn evaluate(
    policy: &PolicyParams,
    test: &[Task],
    lab: &Lab,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<TrajectoryRecord>), EvalError> {
    if test.is_empty() || cfg.n_samples == 0 {
        return Err(EvalError::Empty);
    }
    let mut levels = BTreeMap::new();
    let mut records = Vec::new();
    for &level in &cfg.levels {
        let tasks: Vec<Task> = test
            .iter()
            .flat_map(|t| std::iter::repeat_n(annotate_budget(t, level), cfg.n_samples))
            .collect();
        // index i * n_samples + s encodes (task, sample)
        let scored = lab.collect(policy, &tasks, cfg.seed, seeding::TAG_EVAL, &[level.index() as u64])?;
        let n = scored.len() as f64;
        let per_task_scores: Vec<f64> = scored
            .chunks(cfg.n_samples)
            .map(|c| c.iter().map(|(_, b)| f64::from(b.r_p)).sum::<f64>() / cfg.n_samples as f64)
            .collect();
        let cost_total: f64 = scored.iter().map(|(_, b)| b.cost).sum();
        let trajectories: Vec<Trajectory> = scored.iter().map(|(e, _)| e.trajectory.clone()).collect();
        let report = LevelReport {
            accuracy: per_task_scores.iter().sum::<f64>() / per_task_scores.len() as f64,
            cost_per_query: cost_total / n,
            cost_total,
            call_ratios: call_ratio(&trajectories, lab.vocab.n_experts)?,
            per_call_ratios: per_call_ratio(&trajectories, lab.vocab.n_experts)?,
            mean_r_phi: scored.iter().map(|(_, b)| f64::from(b.r_phi)).sum::<f64>() / n,
            n_tasks: test.len(),
            n_samples: cfg.n_samples,
            per_task_scores,
        };
        levels.insert(level, report);
        records.extend(scored.into_iter().map(|(e, b)| TrajectoryRecord {
            trajectory: e.trajectory,
            reward: Some(b),
            step: None,
        }));
    }
    Ok((EvalReport { levels }, records))
}

/// Trailing moving average; a window of 0 or 1 returns the input.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSeries {
    pub step: Vec<u64>,
    pub r_phi: Vec<f64>,
    pub r_p: Vec<f64>,
    pub r_c: Vec<f64>,
}

pub fn reward_dynamics_series(history: &[StepMetrics], window: usize) -> RewardSeries {
    let col = |f: fn(&StepMetrics) -> f64| moving_average(&history.iter().map(f).collect::<Vec<_>>(), window);
    RewardSeries {
        step: history.iter().map(|m| m.step).collect(),
        r_phi: col(|m| m.mean_r_phi),
        r_p: col(|m| m.mean_r_p),
        r_c: col(|m| m.mean_r_c),
    }
}

/// Per-step mean dollars per query, as `(step, value)` pairs.
pub fn price_series(history: &[StepMetrics], window: usize) -> Vec<(u64, f64)> {
    let raw: Vec<f64> = history.iter().map(|m| m.mean_cost_per_query).collect();
    history
        .iter()
        .map(|m| m.step)
        .zip(moving_average(&raw, window))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

/// Column-ordered table of text or numeric cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => v.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }
}

pub trait ToTable {
    fn to_table(&self) -> Table;
}

impl ToTable for EvalReport {
    fn to_table(&self) -> Table {
        let n_ratios = self.levels.values().next().map_or(0, |r| r.call_ratios.len());
        let mut columns: Vec<String> = ["level", "accuracy", "cost_per_query", "cost_total", "mean_r_phi", "n_tasks", "n_samples"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..n_ratios {
            columns.push(if i + 1 == n_ratios {
                "call_ratio_none".into()
            } else {
                format!("call_ratio_expert_{i}")
            });
        }
        let rows = self
            .levels
            .iter()
            .map(|(level, r)| {
                let mut row = vec![
                    Cell::Text(level.name().into()),
                    Cell::Num(r.accuracy),
                    Cell::Num(r.cost_per_query),
                    Cell::Num(r.cost_total),
                    Cell::Num(r.mean_r_phi),
                    Cell::Num(r.n_tasks as f64),
                    Cell::Num(r.n_samples as f64),
                ];
                row.extend(r.call_ratios.iter().map(|v| Cell::Num(*v)));
                row
            })
            .collect();
        Table { columns, rows }
    }
}

impl ToTable for RewardSeries {
    fn to_table(&self) -> Table {
        Table {
            columns: vec!["step".into(), "r_phi".into(), "r_p".into(), "r_c".into()],
            rows: (0..self.step.len())
                .map(|i| {
                    vec![
                        Cell::Num(self.step[i] as f64),
                        Cell::Num(self.r_phi[i]),
                        Cell::Num(self.r_p[i]),
                        Cell::Num(self.r_c[i]),
                    ]
                })
                .collect(),
        }
    }
}

impl ToTable for [(u64, f64)] {
    fn to_table(&self) -> Table {
        Table {
            columns: vec!["step".into(), "cost_per_query".into()],
            rows: self
                .iter()
                .map(|(s, v)| vec![Cell::Num(*s as f64), Cell::Num(*v)])
                .collect(),
        }
    }
}

impl ToTable for [StepMetrics] {
    fn to_table(&self) -> Table {
        let n_experts = self.first().map_or(0, |m| m.call_ratios.len().saturating_sub(1));
        Table {
            columns: StepMetrics::csv_header(n_experts),
            rows: self
                .iter()
                .map(|m| {
                    m.csv_row()
                        .into_iter()
                        .map(|s| Cell::Num(s.parse().expect("metrics render as numbers")))
                        .collect()
                })
                .collect(),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_table<W: Write>(table: &Table, format: ExportFormat, out: W) -> Result<(), EvalError> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out);
            w.write_record(&table.columns).map_err(|e| EvalError::Table(e.to_string()))?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::render))
                    .map_err(|e| EvalError::Table(e.to_string()))?;
            }
            w.flush().map_err(|e| EvalError::Table(e.to_string()))
        }
        ExportFormat::Jsonl => {
            let mut out = out;
            for row in &table.rows {
                let fields: Vec<String> = table
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, cell)| {
                        let v = match cell {
                            Cell::Text(s) => Value::String(s.clone()),
                            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
                        };
                        format!("{}:{}", Value::String(c.clone()), v)
                    })
                    .collect();
                writeln!(out, "{{{}}}", fields.join(",")).map_err(|e| EvalError::Table(e.to_string()))?;
            }
            Ok(())
        }
    }
}

/// Writes `data` to `path`. CSV uses LF line endings and a header row;
/// JSONL keeps keys in column order.
pub fn export<T: ToTable + ?Sized>(data: &T, path: &Path, format: ExportFormat) -> Result<(), EvalError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_table(&data.to_table(), format, std::io::BufWriter::new(file))
}

fn parse_cell(s: &str) -> Cell {
    s.parse::<f64>().map_or_else(|_| Cell::Text(s.to_string()), Cell::Num)
}

pub fn read_table(path: &Path, format: ExportFormat) -> Result<Table, EvalError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    match format {
        ExportFormat::Csv => {
            let mut r = csv::Reader::from_reader(file);
            let columns = r
                .headers()
                .map_err(|e| EvalError::Table(e.to_string()))?
                .iter()
                .map(String::from)
                .collect();
            let mut rows = Vec::new();
            for rec in r.records() {
                let rec = rec.map_err(|e| EvalError::Table(e.to_string()))?;
                rows.push(rec.iter().map(parse_cell).collect());
            }
            Ok(Table { columns, rows })
        }
        ExportFormat::Jsonl => {
            let mut columns: Vec<String> = Vec::new();
            let mut rows = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                // keys are read back in file order to recover column order
                let mut de = serde_json::Deserializer::from_str(&line);
                let pairs = ordered_pairs(&mut de).map_err(|e| EvalError::Table(e.to_string()))?;
                if columns.is_empty() {
                    columns = pairs.iter().map(|(k, _)| k.clone()).collect();
                }
                rows.push(
                    pairs
                        .into_iter()
                        .map(|(_, v)| match v {
                            Value::Number(n) => Cell::Num(n.as_f64().unwrap_or(f64::NAN)),
                            Value::String(s) => Cell::Text(s),
                            other => Cell::Text(other.to_string()),
                        })
                        .collect(),
                );
            }
            Ok(Table { columns, rows })
        }
    }
}

fn ordered_pairs<'de, D: serde::Deserializer<'de>>(de: D) -> Result<Vec<(String, Value)>, D::Error> {
    struct Pairs;
    impl<'de> serde::de::Visitor<'de> for Pairs {
        type Value = Vec<(String, Value)>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a JSON object")
        }

        fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = map.next_entry::<String, Value>()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }
    de.deserialize_map(Pairs)
}
