//! The budget-gated reward: a correct answer only pays if the episode stayed
//! within the dollar budget of its level.
//!
//! cargo run --example reward

use std::error::Error;

use corl::reward::{cost_reward, default_schedule};
use corl::BudgetLevel;

pub fn run() -> Result<(), Box<dyn Error>> {
    let schedule = default_schedule();
    schedule.validate()?;
    println!("{:<7} {:>10} {:>10} {:>4} {:>4} {:>6}", "level", "budget", "cost", "r_p", "r_c", "r_phi");
    for level in BudgetLevel::ALL {
        let b = schedule.get(level);
        for cost in [0.0, b / 2.0, b, 2.0 * b] {
            for r_p in [0u8, 1] {
                let r_c = cost_reward(cost, b);
                println!("{:<7} {b:>10} {cost:>10} {r_p:>4} {r_c:>4} {:>6}", level.name(), r_p * r_c);
            }
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run()
}
