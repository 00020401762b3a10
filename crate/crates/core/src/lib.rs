//! Cost-controllable routing between a trainable controller policy and a
//! frozen pool of priced expert models.
//!
//! The controller emits a two-token grammar per round (a decision token and a
//! payload token). Decisions either answer directly or call one expert with a
//! plain or refined query; expert replies surface as digest tokens that are
//! masked out of the policy objective. Training uses PPO with a clipped
//! surrogate restricted to controller tokens, GAE advantages, a KL anchor to
//! the initial policy and a budget-gated binary reward.
//!
//! Module map:
//!
//! - [`taskgen`]: seeded synthetic tasks and budget-level conditioning
//! - [`experts`]: simulated expert pool, price table and a remote adapter
//! - [`rollout`]: controller/expert interleaved episodes and the token mask
//! - [`policy`]: controller and value networks with analytic gradients
//! - [`reward`]: dollar cost accounting and the gated reward
//! - [`trainer`]: GAE, masked PPO, KL and value losses, the training loop
//! - [`eval`]: call ratios, held-out evaluation, metric series and exports
//! - [`config`] / [`cli`]: JSON run configuration and the command front end

pub mod cli;
pub mod config;
pub mod eval;
pub mod experts;
pub mod logs;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod seeding;
pub mod taskgen;
pub mod trainer;

pub use config::RunConfig;
pub use experts::{ExpertPool, ExpertProfile, ExpertResponse, PriceTable, QueryQuality};
pub use policy::{Observation, PolicyParams, ValueParams};
pub use reward::{BudgetRule, BudgetSchedule, RewardBreakdown};
pub use rollout::{Trajectory, Vocabulary};
pub use taskgen::{BudgetLevel, Dataset, Task};

/// Random generator used for every stochastic draw in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;
