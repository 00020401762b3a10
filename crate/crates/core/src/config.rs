//! JSON run configuration, checked against the published schema before use.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::experts::remote::RemoteEndpoint;
use crate::experts::{default_pool, ExpertProfile, MixedPool, PoolMember, PriceTable};
use crate::policy::PolicyConfig;
use crate::reward::{BudgetRule, BudgetSchedule};
use crate::rollout::{RolloutConfig, Vocabulary};
use crate::taskgen::{self, DatasetSpec, DEFAULT_ANSWER_VOCAB};
use crate::trainer::{Lab, TrainerConfig};

/// The schema every run configuration must satisfy.
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{}", .0.join("\n"))]
    Schema(Vec<String>),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: e.to_string(),
    }
}

/// One pool member. Remote members keep their prices for cost accounting;
/// their accuracy fields are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSpec {
    pub name: String,
    pub price_in: f64,
    pub price_out: f64,
    pub base_acc: f64,
    pub difficulty_slope: f64,
    pub quality_bonus: f64,
    pub resp_len_mean: u32,
    pub resp_len_spread: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteEndpoint>,
}

impl ExpertSpec {
    pub fn profile(&self) -> ExpertProfile {
        ExpertProfile {
            name: self.name.clone(),
            price_in: self.price_in,
            price_out: self.price_out,
            base_acc: self.base_acc,
            difficulty_slope: self.difficulty_slope,
            quality_bonus: self.quality_bonus,
            resp_len_mean: self.resp_len_mean,
            resp_len_spread: self.resp_len_spread,
        }
    }
}

impl From<ExpertProfile> for ExpertSpec {
    fn from(p: ExpertProfile) -> Self {
        Self {
            name: p.name,
            price_in: p.price_in,
            price_out: p.price_out,
            base_acc: p.base_acc,
            difficulty_slope: p.difficulty_slope,
            quality_bonus: p.quality_bonus,
            resp_len_mean: p.resp_len_mean,
            resp_len_spread: p.resp_len_spread,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Falls back to the trainer seed.
    pub seed: Option<u64>,
    pub n_train: usize,
    pub n_test: usize,
    pub difficulty_mix: [f64; 3],
    pub answer_vocab: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            seed: None,
            n_train: d.n_train,
            n_test: d.n_test,
            difficulty_mix: d.difficulty_mix,
            answer_vocab: d.answer_vocab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: Option<PathBuf>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Steps between trajectory dumps; the last step is always logged.
    pub trajectory_log_every: u64,
    /// Moving-average window of exported series.
    pub smoothing_window: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            checkpoint_every: 50,
            trajectory_log_every: 50,
            smoothing_window: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub experts: Vec<ExpertSpec>,
    pub budgets: BudgetSchedule,
    /// Replaces the schedule with one budget for every level.
    pub fixed_budget: Option<f64>,
    pub trainer: TrainerConfig,
    pub rollout: RolloutConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
    /// Rollout threads; 0 uses every core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            experts: default_pool().into_iter().map(ExpertSpec::from).collect(),
            budgets: BudgetSchedule::default(),
            fixed_budget: None,
            trainer: TrainerConfig::default(),
            rollout: RolloutConfig::default(),
            policy: PolicyConfig::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
            workers: 0,
        }
    }
}

fn schema_validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(RUN_CONFIG_SCHEMA).expect("published schema parses");
        jsonschema::validator_for(&schema).expect("published schema compiles")
    })
}

/// Lists every schema violation as `<json pointer>: <message>`.
pub fn schema_errors(value: &Value) -> Vec<String> {
    schema_validator()
        .iter_errors(value)
        .map(|e| {
            let at = e.instance_path().to_string();
            format!("{}: {}", if at.is_empty() { "/" } else { &at }, e)
        })
        .collect()
}

impl RunConfig {
    /// Parses, schema-checks and semantically validates a config document.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let errors = schema_errors(&value);
        if !errors.is_empty() {
            return Err(ConfigError::Schema(errors));
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Schema(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dataset_spec().validate().map_err(|e| invalid("dataset", e))?;
        if self.experts.is_empty() {
            return Err(invalid("experts", "at least one expert is required"));
        }
        for (i, e) in self.experts.iter().enumerate() {
            e.profile().validate().map_err(|err| invalid(&format!("experts[{i}]"), err))?;
        }
        self.budget_rule().validate().map_err(|e| invalid(
            if self.fixed_budget.is_some() { "fixed_budget" } else { "budgets" },
            e,
        ))?;
        self.trainer.validate().map_err(|e| invalid("trainer", e))?;
        if self.rollout.max_rounds == 0 || self.rollout.base_query_tokens == 0 || self.rollout.refined_multiplier == 0 {
            return Err(invalid("rollout", "max_rounds, base_query_tokens and refined_multiplier must be positive"));
        }
        if !(self.rollout.controller_price >= 0.0) {
            return Err(invalid("rollout.controller_price", "must be nonnegative"));
        }
        if self.policy.hidden == 0 || !(self.policy.temperature > 0.0) {
            return Err(invalid("policy", "hidden must be positive and temperature above 0"));
        }
        if self.eval.n_samples == 0 || self.eval.levels.is_empty() {
            return Err(invalid("eval", "need at least one sample and one level"));
        }
        Ok(())
    }

    /// Fills derived defaults so the written config reproduces the run.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.dataset.seed.get_or_insert(c.trainer.seed);
        c
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.dataset.seed.unwrap_or(self.trainer.seed),
            n_train: self.dataset.n_train,
            n_test: self.dataset.n_test,
            difficulty_mix: self.dataset.difficulty_mix,
            answer_vocab: self.dataset.answer_vocab,
        }
    }

    pub fn budget_rule(&self) -> BudgetRule {
        match self.fixed_budget {
            Some(b) => BudgetRule::Fixed(b),
            None => BudgetRule::Schedule(self.budgets),
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.experts.len(), self.dataset.answer_vocab)
    }

    pub fn prices(&self) -> PriceTable {
        let profiles: Vec<_> = self.experts.iter().map(ExpertSpec::profile).collect();
        PriceTable::from_profiles(&profiles, self.rollout.controller_price)
    }

    /// SHA-256 of the canonical JSON of the effective config, minus the
    /// fields that do not change the learning problem.
    pub fn hash(&self) -> String {
        let mut c = self.effective();
        c.output = OutputConfig::default();
        c.workers = 0;
        c.trainer.max_steps = 0;
        c.eval = EvalConfig::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Builds the dataset, expert pool and budget rule of the run.
    pub fn build_lab(&self) -> Result<Lab, ConfigError> {
        self.validate()?;
        let dataset = taskgen::generate(&self.dataset_spec()).map_err(|e| invalid("dataset", e))?;
        let members = self
            .experts
            .iter()
            .map(|e| match &e.remote {
                Some(r) => {
                    let mut r = r.clone();
                    if r.answer_vocab == DEFAULT_ANSWER_VOCAB {
                        r.answer_vocab = self.dataset.answer_vocab;
                    }
                    PoolMember::Remote(r)
                }
                None => PoolMember::Simulated(e.profile()),
            })
            .collect();
        Ok(Lab {
            dataset,
            pool: Box::new(MixedPool { members }),
            prices: self.prices(),
            rollout: self.rollout,
            budgets: self.budget_rule(),
            vocab: self.vocabulary(),
            threads: None,
        }
        .with_workers(self.workers))
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
