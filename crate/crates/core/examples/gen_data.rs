//! Generate a seeded task split, round-trip it through JSONL and condition a
//! task on each budget level.
//!
//! cargo run --example gen_data -- [seed]

use std::error::Error;
use std::io::BufReader;

use corl::taskgen::{annotate_budget, generate, read_jsonl, write_jsonl, DatasetSpec, DIFFICULTY_BANDS};
use corl::BudgetLevel;

pub fn run(seed: u64) -> Result<(), Box<dyn Error>> {
    let spec = DatasetSpec { seed, n_train: 600, n_test: 60, ..DatasetSpec::default() };
    let data = generate(&spec)?;

    for (lo, hi) in DIFFICULTY_BANDS {
        let n = data.train.iter().filter(|t| t.difficulty >= lo && t.difficulty < hi).count();
        println!("difficulty [{lo:.2}, {hi:.2}): {n} train tasks");
    }

    let mut buf = Vec::new();
    write_jsonl(&data.test, &mut buf)?;
    let back = read_jsonl(BufReader::new(buf.as_slice()))?;
    assert_eq!(back, data.test);
    println!("test split: {} tasks, {} bytes of JSONL", back.len(), buf.len());

    let task = &data.test[0];
    for level in BudgetLevel::ALL {
        let t = annotate_budget(task, level);
        println!("task {} at {level}: features {:?}", t.id, &t.features[..4]);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    run(seed)
}
