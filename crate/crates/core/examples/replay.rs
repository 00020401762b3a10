//! Audit a trajectory log: every cost and reward is recomputed from the
//! logged calls, and a tampered line is reported.
//!
//! cargo run --example replay

use std::error::Error;
use std::fs;

use corl::cli::{replay_log, train_run, TRAJECTORIES_FILE};
use corl::RunConfig;

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.dataset.n_train = 100;
    cfg.dataset.n_test = 10;
    cfg.trainer.max_steps = 2;
    cfg.trainer.batch_size = 32;
    cfg.trainer.mini_batch_size = 16;
    cfg.output.trajectory_log_every = 1;
    let cfg = cfg.effective();

    let dir = tempfile::tempdir()?;
    train_run(&cfg, dir.path(), None)?;
    let log = dir.path().join(TRAJECTORIES_FILE);
    let clean = replay_log(&cfg, &log)?;
    println!("{} lines, {} mismatches", clean.lines, clean.mismatches.len());
    for (level, t) in &clean.levels {
        println!("{level:<6} n {} spend ${:.5} accuracy {:.3}", t.n, t.cost_total, t.accuracy);
    }

    let mut lines: Vec<serde_json::Value> =
        fs::read_to_string(&log)?.lines().map(serde_json::from_str).collect::<Result<_, _>>()?;
    let v = lines.iter_mut().find(|v| v["cost_dollars"].as_f64() > Some(0.0)).ok_or("no paid episode")?;
    v["cost_dollars"] = serde_json::json!(v["cost_dollars"].as_f64().unwrap_or(0.0) * 2.0);
    let tampered: String = lines.iter().map(|v| format!("{v}\n")).collect();
    let bad = dir.path().join("tampered.jsonl");
    fs::write(&bad, tampered)?;
    match replay_log(&cfg, &bad) {
        Ok(s) => s.mismatches.iter().for_each(|m| println!("{m}")),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run()
}
