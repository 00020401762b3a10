//! The frozen expert pool: simulated experts with joint accuracy/price
//! profiles, the price table, and an adapter for remote chat backends.

pub mod remote;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SimRng;

pub use remote::{extract_answer, remote_query, RemoteEndpoint, API_KEY_ENV};

/// Token prices are quoted per this many tokens.
pub const TOKENS_PER_PRICE_UNIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("difficulty {0} outside [0, 1]")]
    DifficultyOutOfRange(f64),
    #[error("no expert with index {0}")]
    UnknownExpert(usize),
    #[error("invalid expert profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("credential missing: environment variable {0} is not set")]
    MissingCredential(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP status {0}")]
    Status(u16),
    #[error("response lacks usage field `{0}`")]
    MissingUsage(&'static str),
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("no answer in [0, {vocab}) found in reply {reply:?}")]
    UnparseableAnswer { reply: String, vocab: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryQuality {
    Plain,
    Refined,
}

/// Accuracy and price profile of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertProfile {
    pub name: String,
    /// Dollars per million input tokens.
    pub price_in: f64,
    /// Dollars per million output tokens.
    pub price_out: f64,
    pub base_acc: f64,
    pub difficulty_slope: f64,
    /// Accuracy gain from a refined query.
    pub quality_bonus: f64,
    pub resp_len_mean: u32,
    pub resp_len_spread: u32,
}

impl ExpertProfile {
    pub fn validate(&self) -> Result<(), ExpertError> {
        let bad = |reason: &str| {
            Err(ExpertError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        if !(self.price_in >= 0.0 && self.price_out >= 0.0)
            || !self.price_in.is_finite()
            || !self.price_out.is_finite()
        {
            return bad("prices must be finite and nonnegative");
        }
        if !(0.0..=1.0).contains(&self.base_acc) {
            return bad("base_acc must lie in [0, 1]");
        }
        if !(self.difficulty_slope >= 0.0) || !(self.quality_bonus >= 0.0) {
            return bad("difficulty_slope and quality_bonus must be nonnegative");
        }
        if self.resp_len_mean < 1 {
            return bad("resp_len_mean must be at least 1");
        }
        Ok(())
    }

    /// Probability that a query of `quality` on a task of `difficulty` is
    /// answered correctly.
    pub fn accuracy(&self, quality: QueryQuality, difficulty: f64) -> f64 {
        let bonus = match quality {
            QueryQuality::Plain => 0.0,
            QueryQuality::Refined => self.quality_bonus,
        };
        (self.base_acc - self.difficulty_slope * difficulty + bonus).clamp(0.0, 1.0)
    }

    /// Inclusive range of simulated response lengths.
    pub fn response_len_range(&self) -> (u32, u32) {
        let lo = self.resp_len_mean.saturating_sub(self.resp_len_spread).max(1);
        let hi = self.resp_len_mean + self.resp_len_spread;
        (lo, hi)
    }

    pub fn call_cost(&self, input_tokens: u32, output_tokens: u32) -> f64 {
        (input_tokens as f64 * self.price_in + output_tokens as f64 * self.price_out)
            / TOKENS_PER_PRICE_UNIT
    }
}

/// The default three-expert pool, strongest and most expensive first.
///
/// Prices are scaled so a typical plain call to the strongest expert costs
/// about $0.005 and one to the cheapest about $0.0001, which keeps the
/// 0.001 / 0.006 / 1000 dollar budgets meaningful.
pub fn default_pool() -> Vec<ExpertProfile> {
    vec![
        ExpertProfile {
            name: "strong".into(),
            price_in: 15.0,
            price_out: 60.0,
            base_acc: 0.95,
            difficulty_slope: 0.25,
            quality_bonus: 0.10,
            resp_len_mean: 70,
            resp_len_spread: 50,
        },
        ExpertProfile {
            name: "mid".into(),
            price_in: 4.0,
            price_out: 16.0,
            base_acc: 0.85,
            difficulty_slope: 0.80,
            quality_bonus: 0.10,
            resp_len_mean: 40,
            resp_len_spread: 20,
        },
        ExpertProfile {
            name: "nano".into(),
            price_in: 0.5,
            price_out: 2.0,
            base_acc: 0.70,
            difficulty_slope: 0.65,
            quality_bonus: 0.10,
            resp_len_mean: 40,
            resp_len_spread: 20,
        },
    ]
}

/// A single expert reply as seen by the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertResponse {
    pub expert_index: usize,
    pub proposed_answer: u32,
    pub input_tokens: u32,
    pub output_tokens: u32,
    pub response_tokens: Vec<u32>,
}

/// What the controller sends to an expert after parsing its round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertQuery {
    pub task_id: u64,
    pub quality: QueryQuality,
    pub query_tokens: u32,
    pub difficulty: f64,
    pub truth: u32,
    pub answer_vocab: u32,
}

/// Samples a simulated reply.
///
/// Draw order is fixed (correctness uniform, wrong-answer offset, length) so
/// that for one generator stream a higher accuracy never turns a correct
/// reply into a wrong one.
pub fn query_expert(
    expert_index: usize,
    profile: &ExpertProfile,
    query: &ExpertQuery,
    rng: &mut SimRng,
) -> Result<ExpertResponse, ExpertError> {
    if !(0.0..=1.0).contains(&query.difficulty) {
        return Err(ExpertError::DifficultyOutOfRange(query.difficulty));
    }
    let p = profile.accuracy(query.quality, query.difficulty);
    let u: f64 = rng.random();
    let offset = if query.answer_vocab > 1 {
        rng.random_range(1..query.answer_vocab)
    } else {
        0
    };
    let (lo, hi) = profile.response_len_range();
    let output_tokens = rng.random_range(lo..=hi);
    let proposed_answer = if u < p {
        query.truth
    } else {
        (query.truth + offset) % query.answer_vocab
    };
    Ok(ExpertResponse {
        expert_index,
        proposed_answer,
        input_tokens: query.query_tokens,
        output_tokens,
        response_tokens: vec![proposed_answer; output_tokens as usize],
    })
}

/// Per-expert token prices plus the controller's own per-token price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    /// `(price_in, price_out)` indexed by expert.
    pub experts: Vec<(f64, f64)>,
    /// Dollars per million controller-emitted tokens.
    pub controller_price: f64,
}

impl PriceTable {
    pub fn from_profiles(profiles: &[ExpertProfile], controller_price: f64) -> Self {
        Self {
            experts: profiles.iter().map(|p| (p.price_in, p.price_out)).collect(),
            controller_price,
        }
    }

    pub fn get(&self, expert: usize) -> Option<(f64, f64)> {
        self.experts.get(expert).copied()
    }
}

/// Anything the rollout can route queries to.
pub trait ExpertPool: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn query(
        &self,
        expert: usize,
        query: &ExpertQuery,
        rng: &mut SimRng,
    ) -> Result<ExpertResponse, ExpertError>;
}

/// Pool of simulated experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPool {
    pub profiles: Vec<ExpertProfile>,
}

impl SimulatedPool {
    pub fn new(profiles: Vec<ExpertProfile>) -> Result<Self, ExpertError> {
        for p in &profiles {
            p.validate()?;
        }
        Ok(Self { profiles })
    }
}

impl ExpertPool for SimulatedPool {
    fn len(&self) -> usize {
        self.profiles.len()
    }

    fn query(
        &self,
        expert: usize,
        query: &ExpertQuery,
        rng: &mut SimRng,
    ) -> Result<ExpertResponse, ExpertError> {
        let profile = self
            .profiles
            .get(expert)
            .ok_or(ExpertError::UnknownExpert(expert))?;
        query_expert(expert, profile, query, rng)
    }
}

/// One pool member: simulated, or forwarded to a chat-completions endpoint.
#[derive(Debug, Clone)]
pub enum PoolMember {
    Simulated(ExpertProfile),
    Remote(RemoteEndpoint),
}

/// Pool mixing simulated and remote members.
#[derive(Debug, Clone)]
pub struct MixedPool {
    pub members: Vec<PoolMember>,
}

impl ExpertPool for MixedPool {
    fn len(&self) -> usize {
        self.members.len()
    }

    fn query(
        &self,
        expert: usize,
        query: &ExpertQuery,
        rng: &mut SimRng,
    ) -> Result<ExpertResponse, ExpertError> {
        match self.members.get(expert) {
            None => Err(ExpertError::UnknownExpert(expert)),
            Some(PoolMember::Simulated(profile)) => query_expert(expert, profile, query, rng),
            Some(PoolMember::Remote(endpoint)) => {
                let text = remote::query_text(query);
                let mut last = None;
                for _ in 0..=endpoint.retries {
                    match remote_query(endpoint, &text) {
                        Ok(mut resp) => {
                            resp.expert_index = expert;
                            return Ok(resp);
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(last.expect("at least one attempt"))
            }
        }
    }
}
