//! Dollar cost of a trajectory and the budget-gated reward
//! `r_phi = r_p * [cost <= B]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::{PriceTable, TOKENS_PER_PRICE_UNIT};
use crate::rollout::{ExpertCall, Trajectory};
use crate::taskgen::{BudgetLevel, Task};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("price table has no entry for expert {0}")]
    MissingPrice(usize),
    #[error("trajectory for task {0} has no final answer")]
    MissingFinalAnswer(u64),
    #[error("task {0} carries no budget level")]
    MissingBudgetLevel(u64),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
}

/// Per-level dollar budgets; strictly increasing from low to high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSchedule {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for BudgetSchedule {
    fn default() -> Self {
        default_schedule()
    }
}

pub fn default_schedule() -> BudgetSchedule {
    BudgetSchedule {
        low: 0.001,
        medium: 0.006,
        high: 1000.0,
    }
}

impl BudgetSchedule {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.low > 0.0 && self.low < self.medium && self.medium < self.high) {
            return Err(RewardError::InvalidBudget(format!(
                "schedule must satisfy 0 < low < medium < high, got {} / {} / {}",
                self.low, self.medium, self.high
            )));
        }
        Ok(())
    }

    pub fn get(&self, level: BudgetLevel) -> f64 {
        match level {
            BudgetLevel::Low => self.low,
            BudgetLevel::Medium => self.medium,
            BudgetLevel::High => self.high,
        }
    }
}

/// How a task's budget level maps to its dollar budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    Schedule(BudgetSchedule),
    /// One budget for every level, as in single-budget studies.
    Fixed(f64),
}

impl BudgetRule {
    pub fn budget_for(&self, level: BudgetLevel) -> f64 {
        match self {
            BudgetRule::Schedule(s) => s.get(level),
            BudgetRule::Fixed(b) => *b,
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        match self {
            BudgetRule::Schedule(s) => s.validate(),
            BudgetRule::Fixed(b) if *b > 0.0 && b.is_finite() => Ok(()),
            BudgetRule::Fixed(b) => Err(RewardError::InvalidBudget(format!(
                "fixed budget must be positive, got {b}"
            ))),
        }
    }
}

impl From<BudgetSchedule> for BudgetRule {
    fn from(s: BudgetSchedule) -> Self {
        BudgetRule::Schedule(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_p: u8,
    pub r_c: u8,
    pub r_phi: u8,
    pub cost: f64,
    pub budget_b: f64,
    pub budget_level: BudgetLevel,
}

pub fn call_cost(call: &ExpertCall, prices: &PriceTable) -> Result<f64, RewardError> {
    let (price_in, price_out) = prices
        .get(call.expert_index)
        .ok_or(RewardError::MissingPrice(call.expert_index))?;
    Ok((call.input_tokens as f64 * price_in + call.output_tokens as f64 * price_out)
        / TOKENS_PER_PRICE_UNIT)
}

pub fn controller_cost(controller_tokens: usize, prices: &PriceTable) -> f64 {
    controller_tokens as f64 * prices.controller_price / TOKENS_PER_PRICE_UNIT
}

/// Total dollars spent by a trajectory: every expert call plus controller
/// tokens at the table's controller price.
pub fn trajectory_cost(traj: &Trajectory, prices: &PriceTable) -> Result<f64, RewardError> {
    let calls = calls_cost(&traj.expert_calls, prices)?;
    Ok(calls + controller_cost(traj.controller_step_count(), prices))
}

pub fn calls_cost(calls: &[ExpertCall], prices: &PriceTable) -> Result<f64, RewardError> {
    calls.iter().map(|c| call_cost(c, prices)).sum()
}

pub fn performance_reward(traj: &Trajectory, task: &Task) -> Result<u8, RewardError> {
    let answer = traj
        .final_answer
        .ok_or(RewardError::MissingFinalAnswer(traj.task_id))?;
    Ok(u8::from(answer == task.answer))
}

/// 1 when `cost <= budget`; the boundary counts as within budget.
pub fn cost_reward(cost: f64, budget: f64) -> u8 {
    u8::from(cost <= budget)
}

pub fn combined_reward(
    traj: &Trajectory,
    task: &Task,
    rule: &BudgetRule,
) -> Result<RewardBreakdown, RewardError> {
    let level = task
        .budget_level
        .ok_or(RewardError::MissingBudgetLevel(task.id))?;
    let budget_b = rule.budget_for(level);
    let r_p = performance_reward(traj, task)?;
    let r_c = cost_reward(traj.cost_dollars, budget_b);
    Ok(RewardBreakdown {
        r_p,
        r_c,
        r_phi: r_p * r_c,
        cost: traj.cost_dollars,
        budget_b,
        budget_level: level,
    })
}
