//! PPO training of the controller. Experts are never touched; only the
//! policy and value parameters in [`TrainState`] change.

mod checkpoint;
mod optim;
mod ppo;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{call_ratio, per_call_ratio};
use crate::experts::{ExpertPool, PriceTable};
use crate::logs::TrajectoryRecord;
use crate::policy::{PolicyConfig, PolicyError, PolicyParams, ValueParams};
use crate::reward::{self, BudgetRule, RewardBreakdown, RewardError};
use crate::rollout::{rollout_episode, Episode, RolloutConfig, RolloutEnv, RolloutError, Vocabulary};
use crate::seeding;
use crate::taskgen::{self, Dataset, LevelMode, Task, TaskError};

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT};
pub use optim::{warmup_factor, Optimizer, OptimizerKind};
pub use ppo::{
    assign_step_rewards, clipped_surrogate, clipped_surrogate_slope, gae, importance_ratio, kl_at, kl_term,
    masked_ppo_objective, process_episode, value_loss, BatchToken, ControllerToken, ProcessedBatch,
    ProcessedTrajectory,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("rewards ({rewards}) and values ({values}) differ in length")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}; parameters left unchanged")]
    NonFinite { what: &'static str, step: u64 },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Sink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub seed: u64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub gae_lambda: f64,
    pub gae_gamma: f64,
    /// Trajectories per step.
    pub batch_size: usize,
    pub mini_batch_size: usize,
    pub max_steps: u64,
    pub warmup_ratio_policy: f64,
    pub warmup_ratio_value: f64,
    pub optimizer: OptimizerKind,
    pub level_mode: LevelMode,
    pub normalize_advantages: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr_policy: 3e-3,
            lr_value: 1e-2,
            clip_eps: 0.2,
            kl_beta: 0.001,
            gae_lambda: 1.0,
            gae_gamma: 1.0,
            batch_size: 512,
            mini_batch_size: 256,
            max_steps: 500,
            warmup_ratio_policy: 0.285,
            warmup_ratio_value: 0.015,
            optimizer: OptimizerKind::Sgd,
            level_mode: LevelMode::Random,
            normalize_advantages: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || !(0.0..=1.0).contains(&self.gae_gamma) {
            return bad("gae_lambda and gae_gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.mini_batch_size == 0 || self.mini_batch_size > self.batch_size {
            return bad("need 1 <= mini_batch_size <= batch_size");
        }
        if !(self.lr_policy >= 0.0 && self.lr_value >= 0.0 && self.kl_beta >= 0.0) {
            return bad("learning rates and kl_beta must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio_policy) || !(0.0..=1.0).contains(&self.warmup_ratio_value) {
            return bad("warm-up ratios must lie in [0, 1]");
        }
        Ok(())
    }
}

/// The fixed world a run trains and evaluates in.
pub struct Lab {
    pub dataset: Dataset,
    pub pool: Box<dyn ExpertPool>,
    pub prices: PriceTable,
    pub rollout: RolloutConfig,
    pub budgets: BudgetRule,
    pub vocab: Vocabulary,
    pub threads: Option<Arc<rayon::ThreadPool>>,
}

impl Lab {
    /// Caps rollout parallelism at `workers` threads (0 keeps the global pool).
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.threads = if workers == 0 {
            None
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .ok()
                .map(Arc::new)
        };
        self
    }

    pub fn env(&self) -> RolloutEnv<'_> {
        RolloutEnv {
            pool: self.pool.as_ref(),
            prices: &self.prices,
            config: &self.rollout,
        }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.threads {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    /// Rolls out every task with its own generator `(seed, tag, prefix.., i)`
    /// and scores it. Output order follows `tasks`.
    pub fn collect(
        &self,
        policy: &PolicyParams,
        tasks: &[Task],
        seed: u64,
        tag: u64,
        prefix: &[u64],
    ) -> Result<Vec<(Episode, RewardBreakdown)>, TrainError> {
        let env = self.env();
        self.install(|| {
            tasks
                .par_iter()
                .enumerate()
                .map(|(i, task)| {
                    let mut idx = prefix.to_vec();
                    idx.push(i as u64);
                    let mut rng = seeding::stream(seed, tag, &idx);
                    let level = task
                        .budget_level
                        .ok_or(RolloutError::MissingBudgetLevel(task.id))?;
                    let episode = rollout_episode(policy, task, &env, self.budgets.budget_for(level), &mut rng)?;
                    let breakdown = reward::combined_reward(&episode.trajectory, task, &self.budgets)?;
                    Ok((episode, breakdown))
                })
                .collect()
        })
    }
}

/// Live parameters, frozen reference policy and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub policy: PolicyParams,
    pub value: ValueParams,
    pub reference: PolicyParams,
    pub policy_opt: Optimizer,
    pub value_opt: Optimizer,
}

impl TrainState {
    pub fn new(vocab: Vocabulary, policy_cfg: &PolicyConfig, cfg: &TrainerConfig) -> Self {
        let policy = PolicyParams::init(vocab, policy_cfg, cfg.seed);
        let value = ValueParams::init(vocab, policy_cfg, cfg.seed);
        Self {
            step: 0,
            policy_opt: Optimizer::new(cfg.optimizer, policy.net.weights.len()),
            value_opt: Optimizer::new(cfg.optimizer, value.net.weights.len()),
            reference: policy.clone(),
            policy,
            value,
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_r_phi: f64,
    pub mean_r_p: f64,
    pub mean_r_c: f64,
    pub mean_cost_per_query: f64,
    /// First-call ratio per expert, then the direct-answer share.
    pub call_ratios: Vec<f64>,
    pub kl: f64,
    pub policy_objective: f64,
    pub value_loss: f64,
    pub lr_policy_effective: f64,
}

impl StepMetrics {
    pub fn csv_header(n_experts: usize) -> Vec<String> {
        let mut h: Vec<String> = ["step", "mean_r_phi", "mean_r_p", "mean_r_c", "mean_cost_per_query"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((0..n_experts).map(|k| format!("call_ratio_expert_{k}")));
        h.push("call_ratio_none".into());
        h.extend(
            ["kl", "policy_objective", "value_loss", "lr_policy_effective"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.step.to_string(),
            self.mean_r_phi.to_string(),
            self.mean_r_p.to_string(),
            self.mean_r_c.to_string(),
            self.mean_cost_per_query.to_string(),
        ];
        r.extend(self.call_ratios.iter().map(f64::to_string));
        r.extend([self.kl, self.policy_objective, self.value_loss, self.lr_policy_effective].map(|v| v.to_string()));
        r
    }

    pub fn from_csv_row(header: &[String], row: &[String]) -> Result<Self, String> {
        let get = |name: &str| -> Result<f64, String> {
            let i = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| format!("missing column {name}"))?;
            row.get(i)
                .ok_or_else(|| format!("short row for {name}"))?
                .parse::<f64>()
                .map_err(|e| format!("{name}: {e}"))
        };
        let mut call_ratios = Vec::new();
        for (i, h) in header.iter().enumerate() {
            if h.starts_with("call_ratio_") {
                call_ratios.push(row[i].parse::<f64>().map_err(|e| format!("{h}: {e}"))?);
            }
        }
        Ok(Self {
            step: get("step")? as u64,
            mean_r_phi: get("mean_r_phi")?,
            mean_r_p: get("mean_r_p")?,
            mean_r_c: get("mean_r_c")?,
            mean_cost_per_query: get("mean_cost_per_query")?,
            call_ratios,
            kl: get("kl")?,
            policy_objective: get("policy_objective")?,
            value_loss: get("value_loss")?,
            lr_policy_effective: get("lr_policy_effective")?,
        })
    }

    /// Share of trajectories answering without any expert call.
    pub fn call_ratio_none(&self) -> f64 {
        *self.call_ratios.last().unwrap_or(&0.0)
    }
}

/// Result of one [`train_step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    pub records: Vec<TrajectoryRecord>,
    /// Per-call expert shares for the step (experts, then direct answers).
    pub per_call_ratios: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub objective: f64,
    pub kl: f64,
    pub value_loss: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One epoch of mini-batch updates over `batch` at 1-based `step`.
///
/// Works on copies and commits only if every gradient was finite.
pub fn apply_update(
    state: &mut TrainState,
    batch: &ProcessedBatch,
    cfg: &TrainerConfig,
    step: u64,
) -> Result<UpdateStats, TrainError> {
    let vocab = state.policy.vocab;
    let lr_policy = cfg.lr_policy * warmup_factor(step, cfg.warmup_ratio_policy, cfg.max_steps);
    let lr_value = cfg.lr_value * warmup_factor(step, cfg.warmup_ratio_value, cfg.max_steps);
    let mut batch = batch.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut batch);
    }
    let mut policy = state.policy.clone();
    let mut value = state.value.clone();
    let mut policy_opt = state.policy_opt.clone();
    let mut value_opt = state.value_opt.clone();
    let (mut obj_sum, mut kl_sum, mut vl_sum, mut n) = (0.0, 0.0, 0.0, 0.0);
    for chunk in batch.trajectories.chunks(cfg.mini_batch_size) {
        let mini = ProcessedBatch {
            trajectories: chunk.to_vec(),
        };
        let (objective, g_obj) = masked_ppo_objective(&mini, &policy, cfg.clip_eps)?;
        let (kl, g_kl) = kl_term(&policy, &state.reference, mini.controller_tokens().map(|t| &t.input));
        let (vloss, g_v) = value_loss(&value, &mini, &vocab);
        let direction: Vec<f64> = g_obj.iter().zip(&g_kl).map(|(a, b)| a - cfg.kl_beta * b).collect();
        let descent: Vec<f64> = g_v.iter().map(|g| -g).collect();
        if !all_finite(&direction) || !objective.is_finite() || !kl.is_finite() {
            return Err(TrainError::NonFinite {
                what: "policy gradient",
                step,
            });
        }
        if !all_finite(&descent) || !vloss.is_finite() {
            return Err(TrainError::NonFinite {
                what: "value gradient",
                step,
            });
        }
        policy_opt.step(&mut policy.net.weights, &direction, lr_policy);
        value_opt.step(&mut value.net.weights, &descent, lr_value);
        obj_sum += objective;
        kl_sum += kl;
        vl_sum += vloss;
        n += 1.0;
    }
    if !all_finite(&policy.net.weights) || !all_finite(&value.net.weights) {
        return Err(TrainError::NonFinite {
            what: "parameter",
            step,
        });
    }
    state.policy = policy;
    state.value = value;
    state.policy_opt = policy_opt;
    state.value_opt = value_opt;
    let n = f64::max(n, 1.0);
    Ok(UpdateStats {
        objective: obj_sum / n,
        kl: kl_sum / n,
        value_loss: vl_sum / n,
        lr_policy,
        lr_value,
    })
}

fn normalize_advantages(batch: &mut ProcessedBatch) {
    let adv: Vec<f64> = batch.controller_tokens().map(|t| t.advantage).collect();
    if adv.len() < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
    let sd = var.sqrt().max(1e-8);
    for traj in &mut batch.trajectories {
        for tok in &mut traj.tokens {
            if let BatchToken::Controller(c) = tok {
                c.advantage = (c.advantage - mean) / sd;
            }
        }
    }
}

/// Snapshot the old policy, sample and roll out a batch, score it, run GAE,
/// update, and report.
pub fn train_step(state: &mut TrainState, lab: &Lab, cfg: &TrainerConfig) -> Result<StepOutcome, TrainError> {
    let step = state.step + 1;
    let old = state.policy.snapshot();
    let mut batch_rng = seeding::stream(cfg.seed, seeding::TAG_BATCH, &[step]);
    let tasks = taskgen::sample_batch(&lab.dataset, cfg.batch_size, cfg.level_mode, &mut batch_rng)?;
    let scored = lab.collect(&old, &tasks, cfg.seed, seeding::TAG_ROLLOUT, &[step])?;

    let mut batch = ProcessedBatch::default();
    for (episode, breakdown) in &scored {
        batch.trajectories.push(process_episode(
            episode,
            *breakdown,
            &state.value,
            &lab.vocab,
            cfg.gae_lambda,
            cfg.gae_gamma,
        )?);
    }
    let stats = apply_update(state, &batch, cfg, step)?;
    state.step = step;

    let n = scored.len() as f64;
    let mean = |f: &dyn Fn(&RewardBreakdown) -> f64| scored.iter().map(|(_, b)| f(b)).sum::<f64>() / n;
    let trajectories: Vec<_> = scored.iter().map(|(e, _)| e.trajectory.clone()).collect();
    let metrics = StepMetrics {
        step,
        mean_r_phi: mean(&|b| f64::from(b.r_phi)),
        mean_r_p: mean(&|b| f64::from(b.r_p)),
        mean_r_c: mean(&|b| f64::from(b.r_c)),
        mean_cost_per_query: mean(&|b| b.cost),
        call_ratios: call_ratio(&trajectories, lab.vocab.n_experts).expect("batch is nonempty"),
        kl: stats.kl,
        policy_objective: stats.objective,
        value_loss: stats.value_loss,
        lr_policy_effective: stats.lr_policy,
    };
    let per_call_ratios = per_call_ratio(&trajectories, lab.vocab.n_experts).expect("batch is nonempty");
    let records = scored
        .into_iter()
        .map(|(e, b)| TrajectoryRecord {
            step: Some(step),
            trajectory: e.trajectory,
            reward: Some(b),
        })
        .collect();
    Ok(StepOutcome {
        metrics,
        records,
        per_call_ratios,
    })
}

/// Receives every completed step; returning an error aborts the loop.
pub trait StepObserver {
    fn on_step(&mut self, _state: &TrainState, _outcome: &StepOutcome) -> Result<(), TrainError> {
        Ok(())
    }
}

impl StepObserver for () {}

#[derive(Debug)]
pub struct LoopOutcome {
    pub state: TrainState,
    pub history: Vec<StepMetrics>,
    /// Set when the loop stopped early; `history` holds the completed steps.
    pub aborted: Option<TrainError>,
}

/// Runs `train_step` from `state.step + 1` through `cfg.max_steps`.
pub fn train_loop(
    mut state: TrainState,
    lab: &Lab,
    cfg: &TrainerConfig,
    observer: &mut dyn StepObserver,
) -> LoopOutcome {
    let mut history = Vec::new();
    if let Err(e) = cfg.validate() {
        return LoopOutcome {
            state,
            history,
            aborted: Some(e),
        };
    }
    while state.step < cfg.max_steps {
        let outcome = match train_step(&mut state, lab, cfg) {
            Ok(o) => o,
            Err(e) => {
                return LoopOutcome {
                    state,
                    history,
                    aborted: Some(e),
                }
            }
        };
        history.push(outcome.metrics.clone());
        if let Err(e) = observer.on_step(&state, &outcome) {
            return LoopOutcome {
                state,
                history,
                aborted: Some(e),
            };
        }
    }
    LoopOutcome {
        state,
        history,
        aborted: None,
    }
}
