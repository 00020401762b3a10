//! Runs every example at reduced size so the documented entry points keep working.

#[allow(dead_code)]
#[path = "../examples/gen_data.rs"]
mod gen_data;
#[allow(dead_code)]
#[path = "../examples/experts.rs"]
mod experts;
#[allow(dead_code)]
#[path = "../examples/reward.rs"]
mod reward;
#[allow(dead_code)]
#[path = "../examples/masked_ppo.rs"]
mod masked_ppo;
#[allow(dead_code)]
#[path = "../examples/train.rs"]
mod train;
#[allow(dead_code)]
#[path = "../examples/study.rs"]
mod study;
#[allow(dead_code)]
#[path = "../examples/replay.rs"]
mod replay;
#[allow(dead_code)]
#[path = "../examples/remote.rs"]
mod remote;

#[test]
fn data_and_experts_examples_run() {
    gen_data::run(0).unwrap();
    experts::run(50).unwrap();
    rollout::run(5).unwrap();
    reward::run().unwrap();
    remote::run(None).unwrap();
}

#[test]
fn training_examples_run() {
    masked_ppo::run().unwrap();
    train::run(3, 32).unwrap();
    eval::run(2, 32).unwrap();
    study::run(2, 32).unwrap();
    replay::run().unwrap();
}
