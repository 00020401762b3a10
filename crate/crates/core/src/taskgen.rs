//! Seeded synthetic task datasets and budget-level conditioning.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::SimRng;

/// Length of a task's feature vector: difficulty, three budget slots filled
/// at encode time, four noise features.
pub const F_DIM: usize = 8;
pub const DEFAULT_ANSWER_VOCAB: u32 = 16;

/// Half-open difficulty bands for easy and medium; the hard band is closed.
pub const DIFFICULTY_BANDS: [(f64, f64); 3] = [(0.0, 0.33), (0.33, 0.66), (0.66, 1.0)];

pub const NOISE_OFFSET: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot sample from an empty training split")]
    EmptyDataset,
    #[error("malformed task line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetLevel {
    Low,
    Medium,
    High,
}

impl BudgetLevel {
    pub const ALL: [BudgetLevel; 3] = [BudgetLevel::Low, BudgetLevel::Medium, BudgetLevel::High];

    pub fn index(self) -> usize {
        match self {
            BudgetLevel::Low => 0,
            BudgetLevel::Medium => 1,
            BudgetLevel::High => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BudgetLevel::Low => "low",
            BudgetLevel::Medium => "medium",
            BudgetLevel::High => "high",
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl std::str::FromStr for BudgetLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(BudgetLevel::Low),
            "medium" => Ok(BudgetLevel::Medium),
            "high" => Ok(BudgetLevel::High),
            other => Err(format!("unknown budget level `{other}`")),
        }
    }
}

impl std::fmt::Display for BudgetLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One synthetic problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub difficulty: f64,
    pub answer: u32,
    pub features: Vec<f64>,
    pub budget_level: Option<BudgetLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Task>,
    pub test: Vec<Task>,
    pub seed: u64,
}

/// Parameters of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Weights over the easy, medium and hard bands.
    pub difficulty_mix: [f64; 3],
    pub answer_vocab: u32,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 2000,
            n_test: 200,
            difficulty_mix: [1.0, 1.0, 1.0],
            answer_vocab: DEFAULT_ANSWER_VOCAB,
        }
    }
}

impl DatasetSpec {
    pub fn new(seed: u64, n_train: usize, n_test: usize, difficulty_mix: [f64; 3]) -> Self {
        Self {
            seed,
            n_train,
            n_test,
            difficulty_mix,
            answer_vocab: DEFAULT_ANSWER_VOCAB,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(TaskError::Config(
                "n_train and n_test must both be at least 1".into(),
            ));
        }
        if self.difficulty_mix.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TaskError::Config(
                "difficulty weights must be finite and nonnegative".into(),
            ));
        }
        if self.difficulty_mix.iter().sum::<f64>() <= 0.0 {
            return Err(TaskError::Config("difficulty weights sum to zero".into()));
        }
        if self.answer_vocab < 2 {
            return Err(TaskError::Config("answer_vocab must be at least 2".into()));
        }
        Ok(())
    }
}

/// Builds the feature vector of a task from its difficulty and noise seed.
pub fn task_features(difficulty: f64, noise_seed: u64) -> Vec<f64> {
    let mut rng = seeding::stream(noise_seed, seeding::TAG_DATASET, &[u64::MAX]);
    let mut features = vec![0.0; F_DIM];
    features[0] = difficulty;
    for f in features.iter_mut().skip(NOISE_OFFSET) {
        *f = rng.random_range(-1.0..1.0);
    }
    features
}

fn draw_task(id: u64, bands: &WeightedIndex<f64>, vocab: u32, rng: &mut SimRng) -> Task {
    let (lo, hi) = DIFFICULTY_BANDS[bands.sample(rng)];
    let difficulty = if hi >= 1.0 {
        rng.random_range(lo..=hi)
    } else {
        rng.random_range(lo..hi)
    };
    let answer = rng.random_range(0..vocab);
    let noise_seed: u64 = rng.random();
    Task {
        id,
        difficulty,
        answer,
        features: task_features(difficulty, noise_seed),
        budget_level: None,
    }
}

/// Generates a dataset deterministically from `spec`. Train ids are
/// `0..n_train`, test ids follow on, so the splits are disjoint.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset, TaskError> {
    spec.validate()?;
    let bands = WeightedIndex::new(spec.difficulty_mix)
        .map_err(|e| TaskError::Config(e.to_string()))?;
    let mut rng = seeding::stream(spec.seed, seeding::TAG_DATASET, &[]);
    let total = (spec.n_train + spec.n_test) as u64;
    let mut tasks: Vec<Task> = (0..total)
        .map(|id| draw_task(id, &bands, spec.answer_vocab, &mut rng))
        .collect();
    let test = tasks.split_off(spec.n_train);
    Ok(Dataset {
        train: tasks,
        test,
        seed: spec.seed,
    })
}

/// Generates a dataset with the default answer vocabulary.
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    difficulty_mix: [f64; 3],
) -> Result<Dataset, TaskError> {
    generate(&DatasetSpec::new(seed, n_train, n_test, difficulty_mix))
}

pub fn annotate_budget(task: &Task, level: BudgetLevel) -> Task {
    Task {
        budget_level: Some(level),
        ..task.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    Fixed(BudgetLevel),
    Random,
}

/// Draws `batch_size` training tasks uniformly with replacement and assigns
/// budget levels according to `mode`.
pub fn sample_batch(
    dataset: &Dataset,
    batch_size: usize,
    mode: LevelMode,
    rng: &mut SimRng,
) -> Result<Vec<Task>, TaskError> {
    if dataset.train.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(TaskError::Config("batch_size must be at least 1".into()));
    }
    let n = dataset.train.len();
    Ok((0..batch_size)
        .map(|_| {
            let task = &dataset.train[rng.random_range(0..n)];
            let level = match mode {
                LevelMode::Fixed(level) => level,
                LevelMode::Random => BudgetLevel::ALL[rng.random_range(0..3)],
            };
            annotate_budget(task, level)
        })
        .collect())
}

pub fn write_jsonl<W: Write>(tasks: &[Task], mut out: W) -> Result<(), TaskError> {
    for task in tasks {
        let line = serde_json::to_string(task).map_err(|e| TaskError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| TaskError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Task>, TaskError> {
    let mut tasks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TaskError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(&line).map_err(|e| TaskError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        tasks.push(task);
    }
    Ok(tasks)
}
