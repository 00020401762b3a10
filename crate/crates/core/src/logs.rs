//! Trajectory logs (one JSON object per line) and their audit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::PriceTable;
use crate::reward::{self, BudgetRule, RewardBreakdown};
use crate::rollout::{controller_mask, Trajectory, Vocabulary};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One log line: the trajectory's own keys, its reward breakdown under
/// `reward`, and the training step that produced it (absent for evaluation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

pub fn write_records<W: Write>(records: &[TrajectoryRecord], out: &mut W) -> Result<(), LogError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| LogError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A disagreement between a logged value and its recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub field: &'static str,
    pub logged: String,
    pub recomputed: String,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Recomputes cost and the three rewards of one record. The budget comes
/// from `rule` when given, otherwise from the logged breakdown.
pub fn audit_record(
    record: &TrajectoryRecord,
    prices: &PriceTable,
    rule: Option<&BudgetRule>,
    vocab: Option<&Vocabulary>,
) -> Vec<Mismatch> {
    let mut out = Vec::new();
    let traj = &record.trajectory;
    let mut push = |field, logged: String, recomputed: String| {
        out.push(Mismatch {
            field,
            logged,
            recomputed,
        })
    };
    if let Some(vocab) = vocab {
        if let Err(e) = traj.check_invariants(vocab) {
            push("steps", "valid trajectory".into(), e);
        }
    }
    if controller_mask(traj).iter().map(|&m| m as usize).sum::<usize>() < 2 {
        push("steps", "at least two controller tokens".into(), "fewer".into());
    }
    let cost = match reward::trajectory_cost(traj, prices) {
        Ok(c) => c,
        Err(e) => {
            push("expert_calls", "priced calls".into(), e.to_string());
            return out;
        }
    };
    if !close(traj.cost_dollars, cost) {
        push("cost_dollars", traj.cost_dollars.to_string(), cost.to_string());
    }
    let Some(logged) = record.reward else {
        return out;
    };
    let budget = match (rule, traj.budget_level) {
        (Some(rule), Some(level)) => rule.budget_for(level),
        _ => logged.budget_b,
    };
    if !close(logged.budget_b, budget) {
        push("reward.budget_b", logged.budget_b.to_string(), budget.to_string());
    }
    if !close(logged.cost, cost) {
        push("reward.cost", logged.cost.to_string(), cost.to_string());
    }
    let r_p = u8::from(traj.final_answer == Some(traj.answer));
    let r_c = reward::cost_reward(cost, budget);
    for (field, a, b) in [
        ("reward.r_p", logged.r_p, r_p),
        ("reward.r_c", logged.r_c, r_c),
        ("reward.r_phi", logged.r_phi, r_p * r_c),
    ] {
        if a != b {
            push(field, a.to_string(), b.to_string());
        }
    }
    out
}
