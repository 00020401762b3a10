#![allow(dead_code)]

use corl::experts::{default_pool, ExpertProfile, SimulatedPool};
use corl::policy::{PolicyConfig, PolicyParams, ValueParams};
use corl::reward::{default_schedule, BudgetRule};
use corl::rollout::RolloutConfig;
use corl::taskgen::{annotate_budget, generate, task_features, BudgetLevel, Dataset, DatasetSpec, LevelMode, Task, DEFAULT_ANSWER_VOCAB};
use corl::trainer::{process_episode, ProcessedBatch};
use corl::trainer::{Lab, OptimizerKind, TrainState, TrainerConfig};
use corl::{PriceTable, Vocabulary};
use rand::{Rng, SeedableRng};

pub fn profile(name: &str, price_in: f64, price_out: f64, base: f64, slope: f64, bonus: f64, len: (u32, u32)) -> ExpertProfile {
    ExpertProfile {
        name: name.into(),
        price_in,
        price_out,
        base_acc: base,
        difficulty_slope: slope,
        quality_bonus: bonus,
        resp_len_mean: len.0,
        resp_len_spread: len.1,
    }
}

pub const TINY_VOCAB: u32 = 8;
pub const TINY_BUDGET: f64 = 0.0035;
pub const TINY_DIFFICULTIES: [f64; 2] = [0.2, 0.8];

/// Two experts: a cheap one that is good on easy tasks and poor on hard ones,
/// and a flat accurate one whose plain replies overrun the budget a third of
/// the time and whose refined replies overrun it more often still.
pub fn tiny_profiles() -> Vec<ExpertProfile> {
    vec![
        profile("pricey", 5.0, 80.0, 0.92, 0.0, 0.05, (38, 10)),
        profile("cheap", 1.0, 4.0, 0.95, 1.0, 0.05, (20, 0)),
    ]
}

fn tiny_tasks(first_id: u64, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Task> {
    (0..n)
        .map(|i| {
            let difficulty = TINY_DIFFICULTIES[i % 2];
            Task {
                id: first_id + i as u64,
                difficulty,
                answer: rng.random_range(0..TINY_VOCAB),
                features: task_features(difficulty, rng.random()),
                budget_level: None,
            }
        })
        .collect()
}

/// One free round, two experts, two difficulty values, one fixed budget.
pub fn tiny_lab(seed: u64) -> Lab {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7177);
    let train = tiny_tasks(0, 200, &mut rng);
    let test = tiny_tasks(200, 200, &mut rng);
    let profiles = tiny_profiles();
    Lab {
        dataset: Dataset { train, test, seed },
        prices: PriceTable::from_profiles(&profiles, 0.0),
        pool: Box::new(SimulatedPool::new(profiles).unwrap()),
        rollout: RolloutConfig {
            max_rounds: 1,
            ..RolloutConfig::default()
        },
        budgets: BudgetRule::Fixed(TINY_BUDGET),
        vocab: Vocabulary::new(2, TINY_VOCAB),
        threads: None,
    }
}

pub fn tiny_trainer(seed: u64, steps: u64) -> TrainerConfig {
    TrainerConfig {
        seed,
        max_steps: steps,
        optimizer: OptimizerKind::Adam,
        level_mode: LevelMode::Fixed(BudgetLevel::Medium),
        ..TrainerConfig::default()
    }
}

/// Expected gated reward of calling `p` with query multiplier `mult` and then
/// answering with the reply (or with any fixed answer, if that is better).
pub fn call_value(p: &ExpertProfile, refined: bool, difficulty: f64, base_tokens: u32, mult: u32, vocab: u32, budget: f64) -> f64 {
    let acc = (p.base_acc - p.difficulty_slope * difficulty + if refined { p.quality_bonus } else { 0.0 }).clamp(0.0, 1.0);
    let input = if refined { base_tokens * mult } else { base_tokens };
    let lo = p.resp_len_mean.saturating_sub(p.resp_len_spread).max(1);
    let hi = p.resp_len_mean + p.resp_len_spread;
    let fits = (lo..=hi)
        .filter(|&l| (input as f64 * p.price_in + l as f64 * p.price_out) / 1e6 <= budget)
        .count() as f64
        / (hi - lo + 1) as f64;
    acc.max(1.0 / vocab as f64) * fits
}

/// Best expected gated reward per difficulty over every deterministic
/// one-round routing: answer directly, or call one expert plainly or refined.
pub fn enumerate_optimum(profiles: &[ExpertProfile], difficulties: &[f64], vocab: u32, budget: f64) -> (f64, Vec<String>) {
    let mut total = 0.0;
    let mut choices = Vec::new();
    for &d in difficulties {
        let mut best = (1.0 / vocab as f64, "answer".to_string());
        for p in profiles {
            for refined in [false, true] {
                let v = call_value(p, refined, d, 40, 3, vocab, budget);
                if v > best.0 {
                    best = (v, format!("{}{}", p.name, if refined { "/refined" } else { "/plain" }));
                }
            }
        }
        total += best.0;
        choices.push(best.1);
    }
    (total / difficulties.len() as f64, choices)
}

pub fn fresh_state(lab: &Lab, cfg: &TrainerConfig) -> TrainState {
    TrainState::new(lab.vocab, &PolicyConfig::default(), cfg)
}

/// Zero-weight policy whose output biases favour `tokens` by `margin`
/// logits, so it emits them with probability close to one wherever legal.
pub fn biased_policy(vocab: Vocabulary, tokens: &[u32], margin: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(vocab, 4);
    for &t in tokens {
        let i = p.net.output_bias_index(t as usize);
        p.net.weights[i] = margin;
    }
    p
}

/// Small default-pool lab for fast integration runs.
pub fn small_lab(seed: u64, max_rounds: u32) -> Lab {
    let spec = DatasetSpec {
        seed,
        n_train: 60,
        n_test: 20,
        ..DatasetSpec::default()
    };
    let profiles = default_pool();
    Lab {
        dataset: generate(&spec).unwrap(),
        prices: PriceTable::from_profiles(&profiles, 0.0),
        pool: Box::new(SimulatedPool::new(profiles).unwrap()),
        rollout: RolloutConfig {
            max_rounds,
            ..RolloutConfig::default()
        },
        budgets: BudgetRule::Schedule(default_schedule()),
        vocab: Vocabulary::new(3, DEFAULT_ANSWER_VOCAB),
        threads: None,
    }
}

pub fn small_trainer(seed: u64, steps: u64) -> TrainerConfig {
    TrainerConfig {
        seed,
        max_steps: steps,
        batch_size: 16,
        mini_batch_size: 8,
        ..TrainerConfig::default()
    }
}

/// Rolls out `n` training tasks under a broad random policy (init seed
/// `seed`) and turns them into a processed batch with random values.
pub fn random_batch(lab: &Lab, seed: u64, n: usize) -> (PolicyParams, ValueParams, ProcessedBatch) {
    let pc = PolicyConfig {
        init_scale: 0.5,
        ..PolicyConfig::default()
    };
    let policy = PolicyParams::init(lab.vocab, &pc, seed);
    let value = ValueParams::init(lab.vocab, &pc, seed ^ 0x5eed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let tasks: Vec<Task> = (0..n)
        .map(|_| {
            let t = &lab.dataset.train[rng.random_range(0..lab.dataset.train.len())];
            annotate_budget(t, BudgetLevel::ALL[rng.random_range(0..3)])
        })
        .collect();
    let scored = lab.collect(&policy, &tasks, seed, corl::seeding::TAG_ROLLOUT, &[]).unwrap();
    let trajectories = scored
        .iter()
        .map(|(e, b)| process_episode(e, *b, &value, &lab.vocab, 1.0, 1.0).unwrap())
        .collect();
    (policy, value, ProcessedBatch { trajectories })
}

/// Copy of `p` with every weight moved by a uniform draw in `[-scale, scale]`.
pub fn jitter(p: &PolicyParams, scale: f64, seed: u64) -> PolicyParams {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q = p.clone();
    for w in &mut q.net.weights {
        *w += rng.random_range(-scale..=scale);
    }
    q
}

/// Worst error between `analytic[i]` and a central difference of `f` over
/// `coords`, relative to the larger magnitude floored at `floor`.
pub fn fd_worst(weights: &[f64], analytic: &[f64], coords: &[usize], h: f64, floor: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut w = weights.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = w[i];
        w[i] = orig + h;
        let up = f(&w);
        w[i] = orig - h;
        let down = f(&w);
        w[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
    }
    worst
}

/// `k` distinct random coordinates below `n`.
pub fn some_coords(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec()
}
