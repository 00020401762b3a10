//! The training objective on a real batch: GAE advantages, the clipped
//! surrogate over controller tokens only, the KL anchor and the value loss.
//! Rewriting every expert token leaves all of them unchanged.
//!
//! cargo run --example masked_ppo

use std::error::Error;

use corl::taskgen::{sample_batch, LevelMode};
use corl::trainer::{
    clipped_surrogate, gae, kl_term, masked_ppo_objective, process_episode, value_loss, BatchToken, ProcessedBatch,
};
use corl::{PolicyParams, RunConfig, SimRng, ValueParams};
use rand::SeedableRng;

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.dataset.n_train = 50;
    cfg.dataset.n_test = 5;
    let lab = cfg.effective().build_lab()?;
    let policy = PolicyParams::init(lab.vocab, &cfg.policy, 0);
    let value = ValueParams::init(lab.vocab, &cfg.policy, 0);

    println!("gae, lambda = gamma = 1: {:?}", gae(&[0.0, 0.0, 1.0], &[0.2, 0.4, 0.6], 1.0, 1.0)?);
    for (ratio, adv) in [(1.5, 1.0), (0.5, 1.0), (0.5, -1.0), (1.5, -1.0)] {
        println!("clip(ratio {ratio}, A {adv}) = {}", clipped_surrogate(ratio, adv, 0.2));
    }

    let mut rng = SimRng::seed_from_u64(0);
    let tasks = sample_batch(&lab.dataset, 32, LevelMode::Random, &mut rng)?;
    let scored = lab.collect(&policy, &tasks, 0, 0, &[])?;
    let trajectories = scored
        .iter()
        .map(|(ep, r)| process_episode(ep, *r, &value, &lab.vocab, 1.0, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    let batch = ProcessedBatch { trajectories };

    let summary = |b: &ProcessedBatch| -> Result<[f64; 3], Box<dyn Error>> {
        let inputs: Vec<_> = b.controller_tokens().map(|t| t.input.clone()).collect();
        Ok([
            masked_ppo_objective(b, &policy, 0.2)?.0,
            kl_term(&policy, &policy, &inputs).0,
            value_loss(&value, b, &lab.vocab).0,
        ])
    };
    let before = summary(&batch)?;

    let mut rewritten = batch.clone();
    for t in &mut rewritten.trajectories {
        for tok in &mut t.tokens {
            if let BatchToken::Expert { token, .. } = tok {
                *token = token.wrapping_mul(31).wrapping_add(7);
            }
        }
    }
    let after = summary(&rewritten)?;
    println!("objective, KL, value loss: {before:?}");
    println!("after rewriting expert tokens: {after:?}");
    assert_eq!(before, after);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run()
}
