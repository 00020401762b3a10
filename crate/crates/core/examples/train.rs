//! Train the controller across all three budget levels and print the learning
//! curve: gated reward, accuracy, spend and which expert is called first.
//!
//! cargo run --release --example train -- [steps]

use std::error::Error;

use corl::trainer::{train_loop, OptimizerKind, TrainState};
use corl::RunConfig;

pub fn run(steps: u64, batch: usize) -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.trainer.max_steps = steps;
    cfg.trainer.batch_size = batch;
    cfg.trainer.mini_batch_size = batch / 2;
    cfg.trainer.optimizer = OptimizerKind::Adam;
    let cfg = cfg.effective();
    let lab = cfg.build_lab()?;

    let state = TrainState::new(lab.vocab, &cfg.policy, &cfg.trainer);
    let out = train_loop(state, &lab, &cfg.trainer, &mut ());
    if let Some(e) = out.aborted {
        return Err(e.into());
    }
    let names: Vec<&str> = cfg.experts.iter().map(|e| e.name.as_str()).collect();
    let every = (steps / 10).max(1);
    for m in out.history.iter().filter(|m| m.step % every == 0 || m.step == steps) {
        let calls: Vec<String> = names.iter().zip(&m.call_ratios).map(|(n, r)| format!("{n} {r:.2}")).collect();
        println!(
            "step {:>4} r_phi {:.3} r_p {:.3} $/query {:.5} first call: {}, answer {:.2}",
            m.step,
            m.mean_r_phi,
            m.mean_r_p,
            m.mean_cost_per_query,
            calls.join(", "),
            m.call_ratio_none()
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    run(steps, 512)
}
