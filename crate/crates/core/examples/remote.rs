//! Route queries to a chat-completions endpoint as one member of the expert
//! pool. The bearer credential is read from CORL_EXPERT_API_KEY only.
//!
//! cargo run --example remote -- <endpoint-url> <model>
//!
//! Without arguments the example shows answer extraction and the mixed pool
//! layout without touching the network.

use std::error::Error;

use corl::experts::{default_pool, extract_answer, ExpertQuery, MixedPool, PoolMember, RemoteEndpoint, API_KEY_ENV};
use corl::{ExpertPool, QueryQuality, SimRng};
use rand::SeedableRng;

pub fn run(target: Option<(String, String)>) -> Result<(), Box<dyn Error>> {
    for reply in ["The answer is 12.", "3 + 4 = 7", "no idea", "answer: 99"] {
        println!("{reply:?} -> {:?}", extract_answer(reply, 16));
    }
    let Some((url, model)) = target else {
        println!("pass <endpoint-url> <model> and set {API_KEY_ENV} to query a live endpoint");
        return Ok(());
    };
    let mut members: Vec<PoolMember> = default_pool().into_iter().map(PoolMember::Simulated).collect();
    members[0] = PoolMember::Remote(RemoteEndpoint { retries: 2, ..RemoteEndpoint::new(url, model) });
    let pool = MixedPool { members };
    let query = ExpertQuery {
        task_id: 1,
        quality: QueryQuality::Refined,
        query_tokens: 120,
        difficulty: 0.5,
        truth: 4,
        answer_vocab: 16,
    };
    let mut rng = SimRng::seed_from_u64(0);
    for k in 0..pool.len() {
        let r = pool.query(k, &query, &mut rng)?;
        println!("expert {k}: answer {} in {} out {}", r.proposed_answer, r.input_tokens, r.output_tokens);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    run(args.next().zip(args.next()))
}
