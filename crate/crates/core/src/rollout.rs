//! Interleaved controller/expert episodes.
//!
//! Each round the controller emits a decision token (`ANSWER` or `CALL_k`)
//! followed by a payload token (an answer id, or `Q_PLAIN` / `Q_REFINED`).
//! A call sends the parsed query to expert `k` and appends its digest tokens
//! with their source. After `max_rounds` free rounds a final round with
//! a forced `ANSWER` decision closes the episode.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::{ExpertPool, ExpertQuery, PriceTable, QueryQuality};
use crate::policy::{self, encode_observation, ObservationContext, PolicyError, PolicyInput, PolicyParams};
use crate::reward::{self, RewardError};
use crate::taskgen::{BudgetLevel, Task};
use crate::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("empty round")]
    Empty,
    #[error("round must start with a decision token, found {0}")]
    PayloadBeforeDecision(u32),
    #[error("decision token {0} is not a call")]
    NotACall(u32),
    #[error("call is missing its query token")]
    MissingQuery,
    #[error("token {token} is not a valid payload after {decision}")]
    BadPayload { decision: u32, token: u32 },
    #[error("token {0} is outside the vocabulary")]
    UnknownToken(u32),
}

#[derive(Debug, Error, PartialEq)]
pub enum RolloutError {
    #[error("task {0} has no budget level")]
    MissingBudgetLevel(u64),
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Token layout for `K` experts and `A` answers:
/// `ANSWER`, `CALL_0..K`, answer ids `0..A`, `Q_PLAIN`, `Q_REFINED`,
/// digest tokens `0..A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    pub n_experts: usize,
    pub answer_vocab: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Answer,
    Call(usize),
    AnswerId(u32),
    Query(QueryQuality),
    Digest(u32),
}

/// Grammar position of a controller token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Decision,
    /// Final round after `max_rounds`: only `ANSWER` is legal.
    ForcedDecision,
    AfterAnswer,
    AfterCall(usize),
}

impl Vocabulary {
    pub fn new(n_experts: usize, answer_vocab: u32) -> Self {
        Self {
            n_experts,
            answer_vocab,
        }
    }

    fn k(&self) -> u32 {
        self.n_experts as u32
    }

    pub fn answer_token(&self) -> u32 {
        0
    }

    pub fn call_token(&self, expert: usize) -> u32 {
        1 + expert as u32
    }

    pub fn answer_id_token(&self, answer: u32) -> u32 {
        self.k() + 1 + answer
    }

    pub fn q_plain(&self) -> u32 {
        self.k() + 1 + self.answer_vocab
    }

    pub fn q_refined(&self) -> u32 {
        self.k() + 2 + self.answer_vocab
    }

    pub fn query_token(&self, quality: QueryQuality) -> u32 {
        match quality {
            QueryQuality::Plain => self.q_plain(),
            QueryQuality::Refined => self.q_refined(),
        }
    }

    pub fn digest_token(&self, answer: u32) -> u32 {
        self.k() + 3 + self.answer_vocab + answer
    }

    pub fn size(&self) -> usize {
        self.n_experts + 3 + 2 * self.answer_vocab as usize
    }

    pub fn classify(&self, token: u32) -> Option<TokenKind> {
        let k = self.k();
        let a = self.answer_vocab;
        Some(match token {
            0 => TokenKind::Answer,
            t if t <= k => TokenKind::Call((t - 1) as usize),
            t if t < k + 1 + a => TokenKind::AnswerId(t - k - 1),
            t if t == k + 1 + a => TokenKind::Query(QueryQuality::Plain),
            t if t == k + 2 + a => TokenKind::Query(QueryQuality::Refined),
            t if t < k + 3 + 2 * a => TokenKind::Digest(t - k - 3 - a),
            _ => return None,
        })
    }

    /// Contiguous token range the controller may emit at `position`.
    pub fn legal_range(&self, position: Position) -> Range<usize> {
        let k = self.n_experts;
        let a = self.answer_vocab as usize;
        match position {
            Position::Decision => 0..k + 1,
            Position::ForcedDecision => 0..1,
            Position::AfterAnswer => k + 1..k + 1 + a,
            Position::AfterCall(_) => k + 1 + a..k + 3 + a,
        }
    }
}

/// Expert selection from a controller round: `Some(k)` for `CALL_k`,
/// `None` for `ANSWER`.
pub fn select_expert(vocab: &Vocabulary, round: &[u32]) -> Result<Option<usize>, GrammarError> {
    let &first = round.first().ok_or(GrammarError::Empty)?;
    match vocab.classify(first) {
        Some(TokenKind::Answer) => Ok(None),
        Some(TokenKind::Call(k)) => Ok(Some(k)),
        Some(_) => Err(GrammarError::PayloadBeforeDecision(first)),
        None => Err(GrammarError::UnknownToken(first)),
    }
}

/// Query extraction from a `CALL_k` round: the query quality and its token
/// count (`base` for plain, `refined_multiplier * base` for refined).
pub fn extract_query(
    vocab: &Vocabulary,
    round: &[u32],
    base_query_tokens: u32,
    refined_multiplier: u32,
) -> Result<(QueryQuality, u32), GrammarError> {
    if select_expert(vocab, round)?.is_none() {
        return Err(GrammarError::NotACall(round[0]));
    }
    let &payload = round.get(1).ok_or(GrammarError::MissingQuery)?;
    match vocab.classify(payload) {
        Some(TokenKind::Query(QueryQuality::Plain)) => Ok((QueryQuality::Plain, base_query_tokens)),
        Some(TokenKind::Query(QueryQuality::Refined)) => {
            Ok((QueryQuality::Refined, refined_multiplier * base_query_tokens))
        }
        _ => Err(GrammarError::BadPayload {
            decision: round[0],
            token: payload,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Controller,
    Expert(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub token: u32,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertCall {
    pub round: u32,
    pub expert_index: usize,
    pub quality: QueryQuality,
    pub input_tokens: u32,
    pub output_tokens: u32,
    pub proposed_answer: Option<u32>,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: u64,
    pub budget_level: Option<BudgetLevel>,
    /// Ground-truth answer of the task, kept so logs can be re-scored.
    pub answer: u32,
    pub steps: Vec<TrajectoryStep>,
    pub expert_calls: Vec<ExpertCall>,
    pub final_answer: Option<u32>,
    pub cost_dollars: f64,
    /// Rounds in which the controller chose freely (at most `max_rounds`).
    pub rounds_used: u32,
    /// Whether the episode ended with the forced final `ANSWER` round.
    pub forced_answer: bool,
}

impl Trajectory {
    pub fn controller_step_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.source == Source::Controller)
            .count()
    }

    /// Controller tokens grouped by round, in order.
    pub fn controller_rounds(&self) -> Vec<Vec<u32>> {
        let mut rounds: Vec<(u32, Vec<u32>)> = Vec::new();
        for s in self.steps.iter().filter(|s| s.source == Source::Controller) {
            match rounds.last_mut() {
                Some((r, toks)) if *r == s.round => toks.push(s.token),
                _ => rounds.push((s.round, vec![s.token])),
            }
        }
        rounds.into_iter().map(|(_, t)| t).collect()
    }

    /// Index of the first expert called, if any.
    pub fn first_expert(&self) -> Option<usize> {
        self.expert_calls.first().map(|c| c.expert_index)
    }

    /// Checks the structural invariants: round ordering, controller before
    /// expert within a round, logprob presence matching the source, nothing
    /// after the final answer, and a parseable grammar.
    pub fn check_invariants(&self, vocab: &Vocabulary) -> Result<(), String> {
        for w in self.steps.windows(2) {
            if w[1].round < w[0].round {
                return Err(format!("round decreases at token {}", w[1].token));
            }
            if w[1].round == w[0].round
                && matches!(w[0].source, Source::Expert(_))
                && w[1].source == Source::Controller
            {
                return Err(format!("controller token after expert token in round {}", w[1].round));
            }
        }
        for s in &self.steps {
            match (s.source, s.logprob) {
                (Source::Controller, Some(lp)) if lp <= 0.0 => {}
                (Source::Controller, _) => return Err("controller step without valid logprob".into()),
                (Source::Expert(_), None) => {}
                (Source::Expert(_), Some(_)) => return Err("expert step with logprob".into()),
            }
        }
        let rounds = self.controller_rounds();
        for (i, round) in rounds.iter().enumerate() {
            match select_expert(vocab, round).map_err(|e| e.to_string())? {
                Some(_) => {
                    extract_query(vocab, round, 1, 1).map_err(|e| e.to_string())?;
                }
                None => {
                    if i + 1 != rounds.len() {
                        return Err("answer round is not the last round".into());
                    }
                }
            }
        }
        if let Some(answer) = self.final_answer {
            let last = self.steps.last().ok_or("final answer without steps")?;
            if last.source != Source::Controller || last.token != vocab.answer_id_token(answer) {
                return Err("steps follow the final answer".into());
            }
        }
        Ok(())
    }
}

/// 1 for controller-emitted steps, 0 for expert-sourced steps.
pub fn controller_mask(traj: &Trajectory) -> Vec<u8> {
    traj.steps
        .iter()
        .map(|s| u8::from(s.source == Source::Controller))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub max_rounds: u32,
    pub base_query_tokens: u32,
    pub refined_multiplier: u32,
    /// Expert-sourced digest tokens appended per successful call.
    pub digest_tokens: u32,
    /// Dollars per million controller tokens.
    pub controller_price: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_rounds: 4,
            base_query_tokens: 40,
            refined_multiplier: 3,
            digest_tokens: 1,
            controller_price: 0.0,
        }
    }
}

/// A trajectory plus the policy inputs of its controller steps, in order.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub inputs: Vec<PolicyInput>,
}

/// Everything a rollout needs besides the policy and the task.
pub struct RolloutEnv<'a> {
    pub pool: &'a dyn ExpertPool,
    pub prices: &'a PriceTable,
    pub config: &'a RolloutConfig,
}

fn sample_at(
    policy: &PolicyParams,
    input: PolicyInput,
    round: u32,
    rng: &mut SimRng,
    traj: &mut Trajectory,
    inputs: &mut Vec<PolicyInput>,
) -> Result<u32, RolloutError> {
    let (token, logprob) = policy::sample_token(&policy::logits(policy, &input), policy.temperature, rng)?;
    traj.steps.push(TrajectoryStep {
        token,
        source: Source::Controller,
        logprob: Some(logprob),
        round,
    });
    inputs.push(input);
    Ok(token)
}

/// Runs one episode of `task` under `budget` dollars.
pub fn rollout_episode(
    policy: &PolicyParams,
    task: &Task,
    env: &RolloutEnv<'_>,
    budget: f64,
    rng: &mut SimRng,
) -> Result<Episode, RolloutError> {
    let level = task
        .budget_level
        .ok_or(RolloutError::MissingBudgetLevel(task.id))?;
    let cfg = env.config;
    if cfg.max_rounds == 0 {
        return Err(RolloutError::NoRounds);
    }
    let vocab = policy.vocab;
    let mut expert_rng = SimRng::seed_from_u64(rng.random());
    let mut traj = Trajectory {
        task_id: task.id,
        budget_level: Some(level),
        answer: task.answer,
        steps: Vec::new(),
        rounds_used: 0,
        forced_answer: false,
        final_answer: None,
        expert_calls: Vec::new(),
        cost_dollars: 0.0,
    };
    let mut inputs = Vec::new();
    let mut ctx = ObservationContext::fresh(level, budget, cfg.max_rounds);
    let mut calls_cost = 0.0;

    for round in 1..=cfg.max_rounds + 1 {
        let forced = round > cfg.max_rounds;
        ctx.round = round;
        ctx.cost_so_far = calls_cost + reward::controller_cost(traj.controller_step_count(), env.prices);
        let obs = encode_observation(task, &ctx, &vocab);
        let decision_pos = if forced {
            Position::ForcedDecision
        } else {
            Position::Decision
        };
        let decision = sample_at(
            policy,
            PolicyInput {
                obs: obs.clone(),
                position: decision_pos,
            },
            round,
            rng,
            &mut traj,
            &mut inputs,
        )?;
        let expert = select_expert(&vocab, &[decision]).expect("sampled decisions are legal");
        let payload_pos = match expert {
            None => Position::AfterAnswer,
            Some(k) => Position::AfterCall(k),
        };
        let payload = sample_at(
            policy,
            PolicyInput {
                obs,
                position: payload_pos,
            },
            round,
            rng,
            &mut traj,
            &mut inputs,
        )?;
        if !forced {
            traj.rounds_used = round;
        }
        let Some(k) = expert else {
            match vocab.classify(payload) {
                Some(TokenKind::AnswerId(a)) => traj.final_answer = Some(a),
                _ => unreachable!("masked sampling only yields answer ids after ANSWER"),
            }
            traj.forced_answer = forced;
            break;
        };
        let (quality, query_tokens) = extract_query(
            &vocab,
            &[decision, payload],
            cfg.base_query_tokens,
            cfg.refined_multiplier,
        )
        .expect("sampled calls are well formed");
        let query = ExpertQuery {
            task_id: task.id,
            quality,
            query_tokens,
            difficulty: task.difficulty,
            truth: task.answer,
            answer_vocab: vocab.answer_vocab,
        };
        let call = match env.pool.query(k, &query, &mut expert_rng) {
            Ok(resp) => {
                let keep = (cfg.digest_tokens as usize).min(resp.response_tokens.len());
                for &t in &resp.response_tokens[resp.response_tokens.len() - keep..] {
                    traj.steps.push(TrajectoryStep {
                        token: vocab.digest_token(t),
                        source: Source::Expert(k),
                        logprob: None,
                        round,
                    });
                }
                ctx.last_digest = Some(resp.proposed_answer);
                ExpertCall {
                    round,
                    expert_index: k,
                    quality,
                    input_tokens: resp.input_tokens,
                    output_tokens: resp.output_tokens,
                    proposed_answer: Some(resp.proposed_answer),
                    failed: false,
                }
            }
            Err(_) => {
                ctx.last_digest = None;
                ExpertCall {
                    round,
                    expert_index: k,
                    quality,
                    input_tokens: 0,
                    output_tokens: 0,
                    proposed_answer: None,
                    failed: true,
                }
            }
        };
        calls_cost += reward::call_cost(&call, env.prices)?;
        ctx.last_expert = Some(k);
        traj.expert_calls.push(call);
    }
    traj.cost_dollars = reward::trajectory_cost(&traj, env.prices)?;
    Ok(Episode {
        trajectory: traj,
        inputs,
    })
}

pub fn run_rollout(
    policy: &PolicyParams,
    task: &Task,
    env: &RolloutEnv<'_>,
    budget: f64,
    rng: &mut SimRng,
) -> Result<Trajectory, RolloutError> {
    rollout_episode(policy, task, env, budget, rng).map(|e| e.trajectory)
}
