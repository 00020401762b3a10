//! Roll out one episode with an untrained controller and show the interleaved
//! token stream, the expert calls and the policy-gradient mask.
//!
//! cargo run --example rollout -- [seed]

use std::error::Error;

use corl::rollout::{controller_mask, rollout_episode, Source};
use corl::taskgen::annotate_budget;
use corl::{BudgetLevel, PolicyParams, RunConfig, SimRng};
use rand::SeedableRng;

pub fn run(seed: u64) -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.dataset.n_train = 10;
    cfg.dataset.n_test = 10;
    let lab = cfg.effective().build_lab()?;
    let policy = PolicyParams::init(lab.vocab, &cfg.policy, seed);
    let task = annotate_budget(&lab.dataset.test[0], BudgetLevel::High);
    let budget = lab.budgets.budget_for(BudgetLevel::High);

    let mut rng = SimRng::seed_from_u64(seed);
    let ep = rollout_episode(&policy, &task, &lab.env(), budget, &mut rng)?;
    let traj = &ep.trajectory;
    let mask = controller_mask(traj);

    let mut digests = 0;
    for (step, m) in traj.steps.iter().zip(&mask) {
        match step.source {
            Source::Controller => {
                let kind = lab.vocab.classify(step.token).ok_or("token outside vocabulary")?;
                println!("round {} controller {kind:?} mask {m}", step.round);
            }
            Source::Expert(_) => {
                assert_eq!(*m, 0);
                digests += 1;
            }
        }
    }
    println!("{digests} expert digest tokens, all masked");
    for call in &traj.expert_calls {
        println!(
            "call: expert {} {:?} in {} out {} -> {:?}",
            call.expert_index, call.quality, call.input_tokens, call.output_tokens, call.proposed_answer
        );
    }
    println!(
        "answer {:?} (truth {}), cost ${:.6}, forced {}",
        traj.final_answer, traj.answer, traj.cost_dollars, traj.forced_answer
    );
    traj.check_invariants(&lab.vocab)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    run(seed)
}
