//! The controller policy and value networks.
//!
//! Both are small tanh networks with analytic gradients. The policy reads an
//! [`Observation`] plus a one-hot of the grammar [`Position`] being sampled,
//! and its logits are masked so only tokens legal at that position carry
//! probability.

mod mlp;

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::{Position, Vocabulary};
use crate::seeding;
use crate::taskgen::{BudgetLevel, Task, F_DIM, NOISE_OFFSET};
use crate::SimRng;

pub use mlp::{Activations, Mlp};

/// Upper clamp of the cumulative-cost feature.
pub const COST_FEATURE_CAP: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no legal token at this position")]
    NoLegalToken,
    #[error("token {token} is not legal at position {position:?}")]
    IllegalToken { token: u32, position: Position },
    #[error("parameter shapes are inconsistent: {0}")]
    Shape(String),
    #[error("non-finite parameter")]
    NonFinite,
}

/// Policy network configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub temperature: f64,
    pub init_scale: f64,
    /// Initial skip weight from "last digest = a" to answer token `a`; a
    /// controller that starts out able to read expert replies.
    pub copy_prior: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            temperature: 1.0,
            init_scale: 0.05,
            copy_prior: 3.0,
        }
    }
}

/// Fixed-length conditioning vector for the controller.
///
/// Layout: task features (8, budget slots 1..4 filled) ++ budget one-hot (3)
/// ++ round / M (1) ++ last expert one-hot (K + 1, last = none) ++ last
/// digest answer one-hot (A + 1, last = none) ++ min(cost / B, 2) (1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn dim(vocab: &Vocabulary) -> usize {
        F_DIM + 3 + 1 + (vocab.n_experts + 1) + (vocab.answer_vocab as usize + 1) + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn budget_block(&self) -> &[f64] {
        &self.0[F_DIM..F_DIM + 3]
    }

    pub fn round_feature(&self) -> f64 {
        self.0[F_DIM + 3]
    }

    pub fn last_expert_block(&self, vocab: &Vocabulary) -> &[f64] {
        let start = F_DIM + 4;
        &self.0[start..start + vocab.n_experts + 1]
    }

    pub fn digest_block(&self, vocab: &Vocabulary) -> &[f64] {
        let start = F_DIM + 4 + vocab.n_experts + 1;
        &self.0[start..start + vocab.answer_vocab as usize + 1]
    }

    pub fn cost_feature(&self) -> f64 {
        *self.0.last().expect("observation is never empty")
    }
}

/// Episode state that, together with the task, determines an observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationContext {
    pub level: BudgetLevel,
    pub budget: f64,
    pub round: u32,
    pub max_rounds: u32,
    pub last_expert: Option<usize>,
    pub last_digest: Option<u32>,
    pub cost_so_far: f64,
}

impl ObservationContext {
    pub fn fresh(level: BudgetLevel, budget: f64, max_rounds: u32) -> Self {
        Self {
            level,
            budget,
            round: 1,
            max_rounds,
            last_expert: None,
            last_digest: None,
            cost_so_far: 0.0,
        }
    }
}

pub fn encode_observation(task: &Task, ctx: &ObservationContext, vocab: &Vocabulary) -> Observation {
    let mut v = Vec::with_capacity(Observation::dim(vocab));
    let budget = ctx.level.one_hot();
    let mut features = task.features.clone();
    features.resize(F_DIM, 0.0);
    features[1..4].copy_from_slice(&budget);
    v.extend_from_slice(&features);
    v.extend_from_slice(&budget);
    let max_rounds = ctx.max_rounds.max(1);
    v.push(f64::from(ctx.round.min(max_rounds)) / f64::from(max_rounds));
    let mut expert = vec![0.0; vocab.n_experts + 1];
    expert[ctx.last_expert.unwrap_or(vocab.n_experts)] = 1.0;
    v.extend_from_slice(&expert);
    let mut digest = vec![0.0; vocab.answer_vocab as usize + 1];
    digest[ctx.last_digest.map_or(vocab.answer_vocab as usize, |a| a as usize)] = 1.0;
    v.extend_from_slice(&digest);
    let ratio = if ctx.budget > 0.0 {
        ctx.cost_so_far / ctx.budget
    } else {
        COST_FEATURE_CAP
    };
    v.push(ratio.clamp(0.0, COST_FEATURE_CAP));
    Observation(v)
}

/// Network input for one controller token: observation plus position one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub obs: Observation,
    pub position: Position,
}

impl PolicyInput {
    pub fn dim(vocab: &Vocabulary) -> usize {
        Observation::dim(vocab) + vocab.n_experts + 2
    }

    pub fn features(&self, vocab: &Vocabulary) -> Vec<f64> {
        let mut x = Vec::with_capacity(Self::dim(vocab));
        x.extend_from_slice(self.obs.as_slice());
        // Task features standardised to zero mean and unit variance.
        x[0] = (x[0] - 0.5) * 12f64.sqrt();
        for f in &mut x[NOISE_OFFSET..F_DIM] {
            *f *= 3f64.sqrt();
        }
        let mut pos = vec![0.0; vocab.n_experts + 2];
        pos[match self.position {
            Position::Decision | Position::ForcedDecision => 0,
            Position::AfterAnswer => 1,
            Position::AfterCall(k) => 2 + k,
        }] = 1.0;
        x.extend_from_slice(&pos);
        x
    }
}

/// Controller parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub vocab: Vocabulary,
    pub temperature: f64,
    pub net: Mlp,
}

impl PolicyParams {
    pub fn init(vocab: Vocabulary, config: &PolicyConfig, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, seeding::TAG_POLICY_INIT, &[]);
        let mut net = Mlp::uniform(
            PolicyInput::dim(&vocab),
            config.hidden,
            vocab.size(),
            config.init_scale,
            &mut rng,
        );
        let digest_start = F_DIM + 4 + vocab.n_experts + 1;
        for a in 0..vocab.answer_vocab {
            let k = net.skip_index(vocab.answer_id_token(a) as usize, digest_start + a as usize);
            net.weights[k] += config.copy_prior;
        }
        Self {
            vocab,
            temperature: config.temperature,
            net,
        }
    }

    pub fn zeros(vocab: Vocabulary, hidden: usize) -> Self {
        Self {
            vocab,
            temperature: 1.0,
            net: Mlp::zeros(PolicyInput::dim(&vocab), hidden, vocab.size()),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !self.net.shape_matches()
            || self.net.in_dim != PolicyInput::dim(&self.vocab)
            || self.net.out_dim != self.vocab.size()
        {
            return Err(PolicyError::Shape(format!(
                "net {}x{}x{} with {} weights for vocabulary {:?}",
                self.net.in_dim,
                self.net.hidden,
                self.net.out_dim,
                self.net.weights.len(),
                self.vocab
            )));
        }
        if !(self.temperature > 0.0) || self.net.weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(())
    }

    /// Frozen deep copy, shareable across rollout workers.
    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot(Arc::new(self.clone()))
    }
}

/// Immutable, cheaply clonable copy of [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot(Arc<PolicyParams>);

impl PolicySnapshot {
    pub fn snapshot(&self) -> PolicySnapshot {
        self.clone()
    }
}

impl Deref for PolicySnapshot {
    type Target = PolicyParams;

    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}

/// Value network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub net: Mlp,
}

impl ValueParams {
    pub fn init(vocab: Vocabulary, config: &PolicyConfig, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, seeding::TAG_VALUE_INIT, &[]);
        Self {
            net: Mlp::uniform(PolicyInput::dim(&vocab), config.hidden, 1, config.init_scale, &mut rng),
        }
    }

    pub fn zeros(vocab: Vocabulary, hidden: usize) -> Self {
        Self {
            net: Mlp::zeros(PolicyInput::dim(&vocab), hidden, 1),
        }
    }
}

/// Raw network outputs with `-inf` on every token illegal at `position`.
pub fn logits(params: &PolicyParams, input: &PolicyInput) -> Vec<f64> {
    let x = input.features(&params.vocab);
    masked_logits(params, &params.net.forward(&x).out, input.position)
}

fn masked_logits(params: &PolicyParams, raw: &[f64], position: Position) -> Vec<f64> {
    let legal = params.vocab.legal_range(position);
    raw.iter()
        .enumerate()
        .map(|(i, &z)| if legal.contains(&i) { z } else { f64::NEG_INFINITY })
        .collect()
}

/// Log-probabilities of `softmax(logits / temperature)`; illegal entries stay
/// at `-inf`. Returns `None` when nothing is legal.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Option<Vec<f64>> {
    let max = logits
        .iter()
        .copied()
        .filter(|z| z.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let scaled_max = max / temperature;
    let lse = logits
        .iter()
        .filter(|z| z.is_finite())
        .map(|z| (z / temperature - scaled_max).exp())
        .sum::<f64>()
        .ln()
        + scaled_max;
    Some(
        logits
            .iter()
            .map(|&z| {
                if z.is_finite() {
                    z / temperature - lse
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect(),
    )
}

/// Draws a token from `softmax(logits / temperature)`.
pub fn sample_token(
    logits: &[f64],
    temperature: f64,
    rng: &mut SimRng,
) -> Result<(u32, f64), PolicyError> {
    let logp = log_softmax(logits, temperature).ok_or(PolicyError::NoLegalToken)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_legal = None;
    for (i, &lp) in logp.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        last_legal = Some(i);
        acc += lp.exp();
        if u < acc {
            return Ok((i as u32, lp));
        }
    }
    // u landed in the rounding slack above the cumulative sum
    let i = last_legal.ok_or(PolicyError::NoLegalToken)?;
    Ok((i as u32, logp[i]))
}

/// `log pi(token | input)` and its exact gradient with respect to the flat
/// policy weights.
pub fn log_prob_and_grad(
    params: &PolicyParams,
    input: &PolicyInput,
    token: u32,
) -> Result<(f64, Vec<f64>), PolicyError> {
    let mut grad = vec![0.0; params.net.weights.len()];
    let lp = accumulate_log_prob_grad(params, input, token, 1.0, &mut grad)?;
    Ok((lp, grad))
}

/// Adds `scale * d log pi(token | input)` into `grad`, returning the log-prob.
pub fn accumulate_log_prob_grad(
    params: &PolicyParams,
    input: &PolicyInput,
    token: u32,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64, PolicyError> {
    let x = input.features(&params.vocab);
    let act = params.net.forward(&x);
    let z = masked_logits(params, &act.out, input.position);
    let logp = log_softmax(&z, params.temperature).ok_or(PolicyError::NoLegalToken)?;
    let t = token as usize;
    if t >= logp.len() || logp[t] == f64::NEG_INFINITY {
        return Err(PolicyError::IllegalToken {
            token,
            position: input.position,
        });
    }
    if scale != 0.0 {
        let inv_t = 1.0 / params.temperature;
        let dout: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(i, &lp)| {
                if lp == f64::NEG_INFINITY {
                    0.0
                } else {
                    let indicator = if i == t { 1.0 } else { 0.0 };
                    scale * (indicator - lp.exp()) * inv_t
                }
            })
            .collect();
        params.net.accumulate_grad(&x, &act, &dout, grad);
    }
    Ok(logp[t])
}

pub fn log_prob(params: &PolicyParams, input: &PolicyInput, token: u32) -> Result<f64, PolicyError> {
    let lp = log_softmax(&logits(params, input), params.temperature).ok_or(PolicyError::NoLegalToken)?;
    match lp.get(token as usize) {
        Some(&v) if v != f64::NEG_INFINITY => Ok(v),
        _ => Err(PolicyError::IllegalToken {
            token,
            position: input.position,
        }),
    }
}

pub fn value(vparams: &ValueParams, input: &PolicyInput, vocab: &Vocabulary) -> f64 {
    vparams.net.forward(&input.features(vocab)).out[0]
}

pub fn value_and_grad(vparams: &ValueParams, input: &PolicyInput, vocab: &Vocabulary) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; vparams.net.weights.len()];
    let v = accumulate_value_grad(vparams, input, vocab, 1.0, &mut grad);
    (v, grad)
}

pub fn accumulate_value_grad(
    vparams: &ValueParams,
    input: &PolicyInput,
    vocab: &Vocabulary,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let x = input.features(vocab);
    let act = vparams.net.forward(&x);
    if scale != 0.0 {
        vparams.net.accumulate_grad(&x, &act, &[scale], grad);
    }
    act.out[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(3, 16)
    }

    fn task() -> Task {
        Task {
            id: 0,
            difficulty: 0.4,
            answer: 2,
            features: vec![0.4, 0.0, 0.0, 0.0, 0.1, -0.2, 0.3, 0.9],
            budget_level: Some(BudgetLevel::Low),
        }
    }

    fn random_input(rng: &mut SimRng, vocab: &Vocabulary) -> PolicyInput {
        let positions = [
            Position::Decision,
            Position::AfterAnswer,
            Position::AfterCall(rng.random_range(0..vocab.n_experts)),
        ];
        let ctx = ObservationContext {
            level: BudgetLevel::ALL[rng.random_range(0..3)],
            budget: 0.006,
            round: rng.random_range(1..=4),
            max_rounds: 4,
            last_expert: Some(rng.random_range(0..vocab.n_experts)),
            last_digest: Some(rng.random_range(0..vocab.answer_vocab)),
            cost_so_far: rng.random_range(0.0..0.01),
        };
        let mut t = task();
        t.difficulty = rng.random_range(0.0..1.0);
        t.features[0] = t.difficulty;
        PolicyInput {
            obs: encode_observation(&t, &ctx, vocab),
            position: positions[rng.random_range(0..3)],
        }
    }

    #[test]
    fn fresh_low_observation() {
        let v = vocab();
        let obs = encode_observation(&task(), &ObservationContext::fresh(BudgetLevel::Low, 0.001, 4), &v);
        assert_eq!(obs.0.len(), Observation::dim(&v));
        assert_eq!(obs.budget_block(), &[1.0, 0.0, 0.0]);
        assert_eq!(&obs.0[1..4], &[1.0, 0.0, 0.0]);
        assert_eq!(obs.last_expert_block(&v), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(obs.digest_block(&v)[16], 1.0);
        assert_eq!(obs.cost_feature(), 0.0);
        assert_eq!(obs.round_feature(), 0.25);
    }

    #[test]
    fn last_expert_and_cost_clamp() {
        let v = vocab();
        let mut ctx = ObservationContext::fresh(BudgetLevel::Low, 0.001, 4);
        ctx.last_expert = Some(1);
        ctx.last_digest = Some(7);
        ctx.cost_so_far = 0.003;
        let obs = encode_observation(&task(), &ctx, &v);
        assert_eq!(obs.last_expert_block(&v), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(obs.digest_block(&v)[7], 1.0);
        assert_eq!(obs.cost_feature(), 2.0);
        for block in [obs.budget_block(), obs.last_expert_block(&v), obs.digest_block(&v)] {
            assert_eq!(block.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn high_budget_cost_feature_is_negligible() {
        let v = vocab();
        let mut ctx = ObservationContext::fresh(BudgetLevel::High, 1000.0, 4);
        ctx.cost_so_far = 0.01;
        let obs = encode_observation(&task(), &ctx, &v);
        assert!(obs.cost_feature() < 1e-4);
    }

    #[test]
    fn legal_token_counts_per_position() {
        let v = vocab();
        let p = PolicyParams::zeros(v, 8);
        let obs = encode_observation(&task(), &ObservationContext::fresh(BudgetLevel::Low, 0.001, 4), &v);
        let count = |pos| {
            logits(&p, &PolicyInput { obs: obs.clone(), position: pos })
                .iter()
                .filter(|z| z.is_finite())
                .count()
        };
        assert_eq!(count(Position::Decision), 4);
        assert_eq!(count(Position::ForcedDecision), 1);
        assert_eq!(count(Position::AfterAnswer), 16);
        assert_eq!(count(Position::AfterCall(2)), 2);
    }

    #[test]
    fn zero_weights_give_uniform_legal_distribution() {
        let v = vocab();
        let p = PolicyParams::zeros(v, 8);
        let obs = encode_observation(&task(), &ObservationContext::fresh(BudgetLevel::Low, 0.001, 4), &v);
        let lp = log_softmax(
            &logits(&p, &PolicyInput { obs, position: Position::AfterAnswer }),
            1.0,
        )
        .unwrap();
        for (i, l) in lp.iter().enumerate() {
            if v.legal_range(Position::AfterAnswer).contains(&i) {
                assert!((l - (1.0f64 / 16.0).ln()).abs() < 1e-12);
            } else {
                assert_eq!(*l, f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = seeding::stream(0, 0, &[]);
        let one = [f64::NEG_INFINITY, 0.3, f64::NEG_INFINITY];
        assert_eq!(sample_token(&one, 1.0, &mut rng).unwrap(), (1, 0.0));
        let two = [1.0, 1.0];
        let (_, lp) = sample_token(&two, 1.0, &mut rng).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
        let none = [f64::NEG_INFINITY; 3];
        assert_eq!(sample_token(&none, 1.0, &mut rng), Err(PolicyError::NoLegalToken));
    }

    #[test]
    fn sampling_frequencies_match_softmax() {
        let logits = [0.3, f64::NEG_INFINITY, -1.2, 0.9, 0.0];
        let temp = 1.0;
        // closed-form softmax oracle
        let e: Vec<f64> = logits.iter().map(|z: &f64| if z.is_finite() { (z / temp).exp() } else { 0.0 }).collect();
        let total: f64 = e.iter().sum();
        let mut rng = seeding::stream(42, 0, &[]);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[sample_token(&logits, temp, &mut rng).unwrap().0 as usize] += 1;
        }
        for i in 0..5 {
            let freq = counts[i] as f64 / n as f64;
            assert!((freq - e[i] / total).abs() < 0.01, "token {i}: {freq}");
        }
        assert_eq!(counts[1], 0);
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = seeding::stream(5, 0, &[]);
        let v = vocab();
        let p = PolicyParams::init(v, &PolicyConfig { init_scale: 0.5, ..Default::default() }, 3);
        for _ in 0..50 {
            let input = random_input(&mut rng, &v);
            let lp = log_softmax(&logits(&p, &input), p.temperature).unwrap();
            let s: f64 = lp.iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_case_bias_gradient() {
        let v = vocab();
        let p = PolicyParams::zeros(v, 8);
        let obs = encode_observation(&task(), &ObservationContext::fresh(BudgetLevel::Low, 0.001, 4), &v);
        let input = PolicyInput { obs, position: Position::Decision };
        let token = v.call_token(1);
        let (lp, grad) = log_prob_and_grad(&p, &input, token).unwrap();
        assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        let idx = p.net.output_bias_index(token as usize);
        assert!((grad[idx] - (1.0 - 1.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn illegal_token_is_rejected() {
        let v = vocab();
        let p = PolicyParams::zeros(v, 8);
        let obs = encode_observation(&task(), &ObservationContext::fresh(BudgetLevel::Low, 0.001, 4), &v);
        let input = PolicyInput { obs, position: Position::Decision };
        assert!(matches!(
            log_prob_and_grad(&p, &input, v.q_plain()),
            Err(PolicyError::IllegalToken { .. })
        ));
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let v = vocab();
        let mut rng = seeding::stream(11, 0, &[]);
        let cfg = PolicyConfig { hidden: 6, temperature: 0.7, init_scale: 0.5, copy_prior: 1.5 };
        for trial in 0..10 {
            let p = PolicyParams::init(v, &cfg, trial);
            let input = random_input(&mut rng, &v);
            let legal: Vec<usize> = v.legal_range(input.position).collect();
            let token = legal[rng.random_range(0..legal.len())] as u32;
            let (_, grad) = log_prob_and_grad(&p, &input, token).unwrap();
            let h = 1e-5;
            for k in (0..p.net.weights.len()).step_by(7) {
                let mut plus = p.clone();
                plus.net.weights[k] += h;
                let mut minus = p.clone();
                minus.net.weights[k] -= h;
                let fd = (log_prob(&plus, &input, token).unwrap() - log_prob(&minus, &input, token).unwrap())
                    / (2.0 * h);
                let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-4);
                assert!(err < 1e-6, "param {k}: fd {fd} analytic {}", grad[k]);
            }
        }
    }

    #[test]
    fn value_gradient_and_zero_weights() {
        let v = vocab();
        let mut rng = seeding::stream(12, 0, &[]);
        let zero = ValueParams::zeros(v, 8);
        let input = random_input(&mut rng, &v);
        assert_eq!(value_and_grad(&zero, &input, &v).0, 0.0);
        let vp = ValueParams::init(v, &PolicyConfig { hidden: 6, init_scale: 0.5, ..Default::default() }, 1);
        let (val, grad) = value_and_grad(&vp, &input, &v);
        assert_eq!(val, value(&vp, &input.clone(), &v));
        let h = 1e-5;
        for k in 0..vp.net.weights.len() {
            let mut plus = vp.clone();
            plus.net.weights[k] += h;
            let mut minus = vp.clone();
            minus.net.weights[k] -= h;
            let fd = (value(&plus, &input, &v) - value(&minus, &input, &v)) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-4);
            assert!(err < 1e-6, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }

    #[test]
    fn snapshots_are_frozen() {
        let v = vocab();
        let mut p = PolicyParams::init(v, &PolicyConfig::default(), 0);
        let snap = p.snapshot();
        let before = (*snap).clone();
        p.net.weights[0] += 1.0;
        assert_eq!(*snap, before);
        assert_eq!(snap.snapshot(), snap);
        let mut rng = seeding::stream(1, 0, &[]);
        let input = random_input(&mut rng, &v);
        let token = v.legal_range(input.position).next().unwrap() as u32;
        let a = log_prob(&snap, &input, token).unwrap();
        let b = log_prob(&snap.snapshot(), &input, token).unwrap();
        assert_eq!((a - b).exp(), 1.0);
    }
}
