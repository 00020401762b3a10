//! Train briefly, then evaluate on the held-out split at every budget level
//! with repeated sampling and export the report as CSV.
//!
//! cargo run --release --example eval -- [steps]

use std::error::Error;

use corl::eval::{evaluate, export, ExportFormat};
use corl::trainer::{train_loop, OptimizerKind, TrainState};
use corl::RunConfig;

pub fn run(steps: u64, batch: usize) -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.trainer.max_steps = steps;
    cfg.trainer.batch_size = batch;
    cfg.trainer.mini_batch_size = batch / 2;
    cfg.trainer.optimizer = OptimizerKind::Adam;
    cfg.dataset.n_test = 50;
    let cfg = cfg.effective();
    let lab = cfg.build_lab()?;
    let out = train_loop(TrainState::new(lab.vocab, &cfg.policy, &cfg.trainer), &lab, &cfg.trainer, &mut ());

    let (report, records) = evaluate(&out.state.policy, &lab.dataset.test, &lab, &cfg.eval)?;
    println!("{} scored trajectories", records.len());
    for (level, r) in &report.levels {
        println!(
            "{level:<6} accuracy {:.3} $/query {:.5} r_phi {:.3} first-call ratios {:?}",
            r.accuracy, r.cost_per_query, r.mean_r_phi, r.call_ratios
        );
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("eval_report.csv");
    export(&report, &path, ExportFormat::Csv)?;
    print!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    run(steps, 512)
}
