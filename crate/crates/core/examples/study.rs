//! Train one controller per fixed budget and compare how spend and the choice
//! of expert diverge.
//!
//! cargo run --release --example study -- [steps]

use std::error::Error;

use corl::cli::{study_run, COMPARISON_FILE};
use corl::eval::price_series;
use corl::trainer::OptimizerKind;
use corl::RunConfig;

pub fn run(steps: u64, batch: usize) -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.trainer.max_steps = steps;
    cfg.trainer.batch_size = batch;
    cfg.trainer.mini_batch_size = batch / 2;
    cfg.trainer.optimizer = OptimizerKind::Adam;
    cfg.output.checkpoint_every = 0;
    cfg.output.trajectory_log_every = 0;
    let cfg = cfg.effective();

    let budgets = [0.001, 0.02];
    let dir = tempfile::tempdir()?;
    let histories = study_run(&cfg, &budgets, dir.path())?;
    for (b, h) in budgets.iter().zip(&histories) {
        let last = h.last().ok_or("empty history")?;
        let prices = price_series(h, 10);
        println!(
            "budget ${b}: final $/query {:.5} (smoothed {:.5}), r_p {:.3}, strongest-expert share {:.2}",
            last.mean_cost_per_query,
            prices.last().map_or(0.0, |p| p.1),
            last.mean_r_p,
            last.call_ratios[0]
        );
    }
    print!("{}", std::fs::read_to_string(dir.path().join(COMPARISON_FILE))?.lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    run(steps, 512)
}
