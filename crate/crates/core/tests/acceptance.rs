//! Acceptance run: one PASS/FAIL line per criterion; exits non-zero if any fail.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use corl::cli::study_run;
use corl::config::RunConfig;
use corl::eval::{evaluate, EvalConfig};
use corl::logs::read_records;
use corl::policy::{self, log_prob_and_grad, value_and_grad, PolicyParams};
use corl::reward::{combined_reward, default_schedule, BudgetRule};
use corl::rollout::Trajectory;
use corl::taskgen::{annotate_budget, BudgetLevel, Task};
use corl::trainer::{
    clipped_surrogate, gae, kl_term, masked_ppo_objective, train_loop, value_loss, BatchToken, OptimizerKind,
    ProcessedBatch, StepMetrics, TrainState,
};
use rand::{Rng, SeedableRng};

type Outcome = (bool, String);

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 reward gate exactness", gate),
        ("2 masked objective invariance", masking),
        ("3 GAE reduction at lambda = gamma = 1", gae_reduction),
        ("4 gradient oracles", gradients),
        ("5 clip arithmetic", clip),
        ("6 single-budget dynamics study", study),
        ("7 multi-budget controllability", multi_budget),
        ("8 tiny-instance oracle optimality", oracle),
        ("9 determinism and replay", determinism),
        ("10 evaluation protocol", eval_protocol),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let (ok, detail) = check();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {name}: {} ({detail}; {secs:.1}s)", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn gate() -> Outcome {
    let rule = BudgetRule::Schedule(default_schedule());
    let mut cases = 0;
    for level in BudgetLevel::ALL {
        let b = rule.budget_for(level);
        for r_p in [0u8, 1] {
            // (cost, expected r_phi): inclusive boundary at cost == B
            for (cost, within) in [(b / 2.0, true), (b, true), (2.0 * b, false)] {
                let task = annotate_budget(
                    &Task { id: 0, difficulty: 0.5, answer: 3, features: vec![0.0; 8], budget_level: None },
                    level,
                );
                let traj = Trajectory {
                    task_id: 0,
                    budget_level: Some(level),
                    answer: 3,
                    steps: vec![],
                    expert_calls: vec![],
                    final_answer: Some(if r_p == 1 { 3 } else { 4 }),
                    cost_dollars: cost,
                    rounds_used: 1,
                    forced_answer: false,
                };
                let got = combined_reward(&traj, &task, &rule).unwrap();
                let want = if within { r_p } else { 0 };
                if got.r_phi != want || got.r_p != r_p {
                    return (false, format!("level {level}, r_p {r_p}, cost {cost}: r_phi {}", got.r_phi));
                }
                cases += 1;
            }
        }
    }
    (true, format!("{cases} cases match r_phi = r_p iff cost <= B, exact"))
}

fn substitute(batch: &ProcessedBatch, rng: &mut rand_chacha::ChaCha8Rng) -> (ProcessedBatch, usize) {
    let mut out = batch.clone();
    let mut n = 0;
    for t in &mut out.trajectories {
        for tok in &mut t.tokens {
            if let BatchToken::Expert { token, .. } = tok {
                *token = rng.random();
                n += 1;
            }
        }
    }
    (out, n)
}

fn masking() -> Outcome {
    let lab = small_lab(1, 4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let mut swapped_tokens = 0;
    for i in 0..200u64 {
        let (old, value, batch) = random_batch(&lab, i, 1 + (i as usize % 12));
        let params = jitter(&old, 0.05, i);
        let reference = jitter(&old, 0.05, i + 1000);
        let (swapped, n) = substitute(&batch, &mut rng);
        swapped_tokens += n;
        let (a, ga) = masked_ppo_objective(&batch, &params, 0.2).unwrap();
        let (b, gb) = masked_ppo_objective(&swapped, &params, 0.2).unwrap();
        let inputs = |bt: &ProcessedBatch| bt.controller_tokens().map(|t| t.input.clone()).collect::<Vec<_>>();
        let (ka, gka) = kl_term(&params, &reference, &inputs(&batch));
        let (kb, gkb) = kl_term(&params, &reference, &inputs(&swapped));
        let (va, gva) = value_loss(&value, &batch, &lab.vocab);
        let (vb, gvb) = value_loss(&value, &swapped, &lab.vocab);
        let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
        if a.to_bits() != b.to_bits() || ka.to_bits() != kb.to_bits() || va.to_bits() != vb.to_bits()
            || !same(&ga, &gb) || !same(&gka, &gkb) || !same(&gva, &gvb)
        {
            return (false, format!("batch {i} differs after substitution"));
        }
    }
    (true, format!("200 batches, {swapped_tokens} expert tokens replaced, objective and gradients bit-identical"))
}

fn gae_reduction() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = gae(&r, &v, 1.0, 1.0).unwrap();
        for t in 0..n {
            let ret: f64 = r[t..].iter().sum();
            worst = worst.max((a[t] - (ret - v[t])).abs());
        }
    }
    (worst <= 1e-10, format!("1000 episodes, max |A - (G - V)| = {worst:.1e}, tolerance 1e-10"))
}

fn gradients() -> Outcome {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-4;
    const TOL: f64 = 1e-5;
    const INSTANCES: u64 = 100;
    let lab = small_lab(4, 4);
    let mut worst = [0.0f64; 4];
    for i in 0..INSTANCES {
        let (base, value, batch) = random_batch(&lab, 500 + i, 2);
        let params = jitter(&base, 0.1, i);
        let reference = jitter(&base, 0.1, i + 7);
        let tokens: Vec<_> = batch.controller_tokens().cloned().collect();
        let tok = &tokens[i as usize % tokens.len()];
        let coords = |n: usize| some_coords(n, 12, i);
        let set = |p: &PolicyParams, w: &[f64]| {
            let mut q = p.clone();
            q.net.weights.copy_from_slice(w);
            q
        };

        let (_, g) = log_prob_and_grad(&params, &tok.input, tok.token).unwrap();
        let e = fd_worst(&params.net.weights, &g, &coords(g.len()), H, FLOOR, |w| {
            policy::log_prob(&set(&params, w), &tok.input, tok.token).unwrap()
        });
        worst[0] = worst[0].max(e);

        let (_, g) = value_and_grad(&value, &tok.input, &lab.vocab);
        let e = fd_worst(&value.net.weights, &g, &coords(g.len()), H, FLOOR, |w| {
            let mut v = value.clone();
            v.net.weights.copy_from_slice(w);
            policy::value(&v, &tok.input, &lab.vocab)
        });
        worst[1] = worst[1].max(e);

        let inputs: Vec<_> = tokens.iter().map(|t| t.input.clone()).collect();
        let (_, g) = kl_term(&params, &reference, &inputs);
        let e = fd_worst(&params.net.weights, &g, &coords(g.len()), H, FLOOR, |w| {
            kl_term(&set(&params, w), &reference, &inputs).0
        });
        worst[2] = worst[2].max(e);

        let (_, g) = value_loss(&value, &batch, &lab.vocab);
        let e = fd_worst(&value.net.weights, &g, &coords(g.len()), H, FLOOR, |w| {
            let mut v = value.clone();
            v.net.weights.copy_from_slice(w);
            value_loss(&v, &batch, &lab.vocab).0
        });
        worst[3] = worst[3].max(e);
    }
    let ok = worst.iter().all(|&w| w <= TOL);
    (
        ok,
        format!(
            "{INSTANCES} instances each, worst relative error logprob {:.1e}, value {:.1e}, KL {:.1e}, value loss {:.1e}, tolerance {TOL:.0e} (magnitudes floored at {FLOOR:.0e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn clip() -> Outcome {
    // (ratio, advantage, eps, expected)
    let cases = [
        (1.5, 1.0, 0.2, 1.2),
        (0.5, -1.0, 0.2, -0.8),
        (1.5, -1.0, 0.2, -1.5),
        (0.5, 1.0, 0.2, 0.5),
        (1.0, 2.0, 0.2, 2.0),
        (1.1, 1.0, 0.2, 1.1),
        (0.75, -2.0, 0.5, -1.5),
        (1.25, 4.0, 0.25, 5.0),
        (0.0, 3.0, 0.2, 0.0),
        (2.0, 0.0, 0.2, 0.0),
    ];
    for (r, a, e, want) in cases {
        let got = clipped_surrogate(r, a, e);
        if got != want {
            return (false, format!("ratio {r}, A {a}, eps {e}: {got} != {want}"));
        }
    }
    (true, format!("{} cases exact", cases.len()))
}

/// Default lab configuration with the Adam settings used for dynamics runs.
fn lab_config(seed: u64, steps: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.trainer.seed = seed;
    cfg.trainer.max_steps = steps;
    cfg.trainer.optimizer = OptimizerKind::Adam;
    cfg.trainer.lr_policy = 3e-3;
    cfg.trainer.lr_value = 1e-2;
    cfg.output.checkpoint_every = 0;
    cfg.output.trajectory_log_every = 0;
    cfg.workers = 1;
    cfg.effective()
}

fn decile_mean(h: &[StepMetrics], last: bool, f: fn(&StepMetrics) -> f64) -> f64 {
    let d = (h.len() / 10).max(1);
    let part = if last { &h[h.len() - d..] } else { &h[..d] };
    part.iter().map(f).sum::<f64>() / d as f64
}

fn study() -> Outcome {
    let mut wins = [0; 3];
    let mut notes = Vec::new();
    for seed in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let h = study_run(&lab_config(seed, 300), &[0.001, 0.02], dir.path()).unwrap();
        let strong = |h: &[StepMetrics]| decile_mean(h, true, |m| m.call_ratios[0]);
        let (lo, hi) = (strong(&h[0]), strong(&h[1]));
        let (c_lo, c_hi) = (h[0].last().unwrap().mean_cost_per_query, h[1].last().unwrap().mean_cost_per_query);
        let rises = h.iter().all(|r| decile_mean(r, true, |m| m.mean_r_p) >= decile_mean(r, false, |m| m.mean_r_p));
        wins[0] += usize::from(hi > lo);
        wins[1] += usize::from(c_hi > c_lo);
        wins[2] += usize::from(rises);
        notes.push(format!("seed {seed}: strong {lo:.2}/{hi:.2}, cost {c_lo:.5}/{c_hi:.5}"));
    }
    (
        wins.iter().all(|&w| w == 3),
        format!(
            "B 0.001 vs 0.02, 300 steps: strongest ratio higher {}/3, final cost higher {}/3, r_p non-decreasing {}/3; {}",
            wins[0],
            wins[1],
            wins[2],
            notes.join("; ")
        ),
    )
}

fn multi_budget() -> Outcome {
    let mut passes = 0;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let cfg = lab_config(seed, 400);
        let lab = cfg.build_lab().unwrap();
        let state = TrainState::new(lab.vocab, &cfg.policy, &cfg.trainer);
        let out = train_loop(state, &lab, &cfg.trainer, &mut ());
        let (report, _) = evaluate(&out.state.policy, &lab.dataset.test, &lab, &cfg.eval).unwrap();
        let r = |l: BudgetLevel| &report.levels[&l];
        let strong = [BudgetLevel::Low, BudgetLevel::Medium, BudgetLevel::High].map(|l| r(l).call_ratios[0]);
        let ok = strong[0] < strong[1]
            && strong[1] < strong[2]
            && r(BudgetLevel::Low).accuracy <= r(BudgetLevel::High).accuracy
            && r(BudgetLevel::Low).cost_per_query <= r(BudgetLevel::High).cost_per_query;
        passes += usize::from(ok);
        notes.push(format!(
            "seed {seed}: strong {:.2}/{:.2}/{:.2}, accuracy {:.3}/{:.3}, cost {:.5}/{:.5}",
            strong[0],
            strong[1],
            strong[2],
            r(BudgetLevel::Low).accuracy,
            r(BudgetLevel::High).accuracy,
            r(BudgetLevel::Low).cost_per_query,
            r(BudgetLevel::High).cost_per_query
        ));
    }
    (passes >= 2, format!("{passes}/3 seeds ordered, majority required; {}", notes.join("; ")))
}

fn oracle() -> Outcome {
    let (opt, choices) = enumerate_optimum(&tiny_profiles(), &TINY_DIFFICULTIES, TINY_VOCAB, TINY_BUDGET);
    let mut ratios = Vec::new();
    for seed in 0..3 {
        let lab = tiny_lab(seed);
        let cfg = tiny_trainer(seed, 300);
        let out = train_loop(fresh_state(&lab, &cfg), &lab, &cfg, &mut ());
        let ecfg = EvalConfig { n_samples: 8, levels: vec![BudgetLevel::Medium], seed };
        let (report, _) = evaluate(&out.state.policy, &lab.dataset.test, &lab, &ecfg).unwrap();
        ratios.push(report.levels[&BudgetLevel::Medium].mean_r_phi / opt);
    }
    let ok = ratios.iter().all(|&r| r >= 0.9);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    (
        ok,
        format!("optimum {opt:.4} via {choices:?}; achieved/optimum {} after 300 steps, need >= 0.9 in 3/3", shown.join(", ")),
    )
}

fn corl_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_corl")).args(args).output().unwrap()
}

const SMALL_RUN: &str = r#"{
  "dataset": {"n_train": 200, "n_test": 25},
  "trainer": {"seed": 11, "max_steps": 6, "batch_size": 64, "mini_batch_size": 32},
  "output": {"checkpoint_every": 3, "trajectory_log_every": 2},
  "workers": 1
}"#;

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let runs = [tmp.path().join("a"), tmp.path().join("b")];
    for r in &runs {
        if !corl_bin(&["--config", p(&cfg), "--out", p(r), "train"]).status.success() {
            return (false, "train failed".into());
        }
    }
    let same = fs::read(runs[0].join("metrics.csv")).unwrap() == fs::read(runs[1].join("metrics.csv")).unwrap();
    let ev = tmp.path().join("ev");
    corl_bin(&["--config", p(&cfg), "--out", p(&ev), "eval", "--checkpoint", p(&runs[0].join("checkpoint.json"))]);
    let logs = [
        runs[0].join("trajectories.jsonl"),
        runs[1].join("trajectories.jsonl"),
        ev.join("eval_trajectories.jsonl"),
    ];
    let replay_ok = logs.iter().filter(|l| corl_bin(&["replay", p(l)]).status.code() == Some(0)).count();
    (
        same && replay_ok == logs.len(),
        format!("metrics.csv byte-identical: {same}; replay exit 0 on {replay_ok}/{} logs", logs.len()),
    )
}

fn eval_protocol() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let run = tmp.path().join("run");
    let ev = tmp.path().join("ev");
    corl_bin(&["--config", p(&cfg), "--out", p(&run), "train"]);
    let out = corl_bin(&["--config", p(&cfg), "--out", p(&ev), "eval", "--checkpoint", p(&run.join("checkpoint.json")), "--samples", "8"]);
    if !out.status.success() {
        return (false, String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let n_test = 25;
    let records = read_records(std::io::BufReader::new(fs::File::open(ev.join("eval_trajectories.jsonl")).unwrap())).unwrap();
    let report: corl::eval::EvalReport =
        serde_json::from_str(&fs::read_to_string(ev.join("eval_report.json")).unwrap()).unwrap();
    let mut by_level: BTreeMap<BudgetLevel, Vec<&Trajectory>> = BTreeMap::new();
    for r in &records {
        by_level.entry(r.trajectory.budget_level.unwrap()).or_default().push(&r.trajectory);
    }
    let mut counts = Vec::new();
    for (level, lr) in &report.levels {
        let trajs = &by_level[level];
        counts.push(trajs.len());
        if trajs.len() != 8 * n_test {
            return (false, format!("{level}: {} trajectories", trajs.len()));
        }
        for (i, score) in lr.per_task_scores.iter().enumerate() {
            let chunk = &trajs[i * 8..(i + 1) * 8];
            if chunk.iter().any(|t| t.task_id != chunk[0].task_id) {
                return (false, format!("{level}: samples of task {i} are not contiguous"));
            }
            let mean = chunk.iter().filter(|t| t.final_answer == Some(t.answer)).count() as f64 / 8.0;
            if mean != *score {
                return (false, format!("{level}: task {i} score {score} != {mean}"));
            }
        }
    }
    (
        counts.len() == 3,
        format!("{counts:?} trajectories per level for {n_test} tasks; every per-task score equals the mean of its 8 outcomes"),
    )
}
