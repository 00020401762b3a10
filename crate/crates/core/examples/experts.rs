//! Query the simulated expert pool: accuracy curves, reply lengths and the
//! dollar price of a call.
//!
//! cargo run --example experts

use std::error::Error;

use corl::experts::{default_pool, ExpertQuery, SimulatedPool};
use corl::{ExpertPool, QueryQuality, SimRng};
use rand::SeedableRng;

pub fn run(samples: usize) -> Result<(), Box<dyn Error>> {
    let profiles = default_pool();
    let pool = SimulatedPool::new(profiles.clone())?;
    let mut rng = SimRng::seed_from_u64(7);

    println!("{:<8} {:>6} {:>8} {:>8} {:>10}", "expert", "diff", "plain", "refined", "$/call");
    for (k, p) in profiles.iter().enumerate() {
        for difficulty in [0.1, 0.5, 0.9] {
            let mut hits = [0usize; 2];
            let mut dollars = 0.0;
            for (q, quality) in [QueryQuality::Plain, QueryQuality::Refined].into_iter().enumerate() {
                for i in 0..samples {
                    let query = ExpertQuery {
                        task_id: i as u64,
                        quality,
                        query_tokens: 120,
                        difficulty,
                        truth: 3,
                        answer_vocab: 16,
                    };
                    let r = pool.query(k, &query, &mut rng)?;
                    hits[q] += usize::from(r.proposed_answer == 3);
                    dollars += p.call_cost(r.input_tokens, r.output_tokens);
                }
            }
            let n = samples as f64;
            println!(
                "{:<8} {difficulty:>6.1} {:>8.3} {:>8.3} {:>10.6}",
                p.name,
                hits[0] as f64 / n,
                hits[1] as f64 / n,
                dollars / (2.0 * n)
            );
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run(2000)
}
