//! Advantage estimation and the three differentiable training terms: the
//! token-masked clipped surrogate, the KL anchor and the value regression.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::policy::{self, log_softmax, PolicyError, PolicyInput, PolicyParams, ValueParams};
use crate::reward::RewardBreakdown;
use crate::rollout::{Episode, Source, Trajectory, Vocabulary};

/// Generalized advantage estimation with a terminal bootstrap value of 0.
pub fn gae(rewards: &[f64], values: &[f64], lambda: f64, gamma: f64) -> Result<Vec<f64>, TrainError> {
    if rewards.len() != values.len() {
        return Err(TrainError::LengthMismatch {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = 0.0;
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    Ok(adv)
}

/// Per-controller-step rewards: the trajectory reward on the last controller
/// step, zero elsewhere.
pub fn assign_step_rewards(traj: &Trajectory, breakdown: &RewardBreakdown) -> Vec<f64> {
    let n = traj.controller_step_count();
    let mut r = vec![0.0; n];
    if let Some(last) = r.last_mut() {
        *last = f64::from(breakdown.r_phi);
    }
    r
}

pub fn importance_ratio(new_logprob: f64, old_logprob: f64) -> f64 {
    (new_logprob - old_logprob).exp()
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the ratio.
pub fn clipped_surrogate_slope(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerToken {
    pub input: PolicyInput,
    pub token: u32,
    pub old_logprob: f64,
    pub advantage: f64,
    pub return_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BatchToken {
    Controller(ControllerToken),
    Expert { token: u32, expert: usize },
}

/// One trajectory's tokens in sequence order, each tagged by source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedTrajectory {
    pub tokens: Vec<BatchToken>,
    pub reward: RewardBreakdown,
}

impl ProcessedTrajectory {
    pub fn controller_tokens(&self) -> impl Iterator<Item = &ControllerToken> {
        self.tokens.iter().filter_map(|t| match t {
            BatchToken::Controller(c) => Some(c),
            BatchToken::Expert { .. } => None,
        })
    }

    /// `sum_t I(y_t)`.
    pub fn mask_count(&self) -> usize {
        self.controller_tokens().count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessedBatch {
    pub trajectories: Vec<ProcessedTrajectory>,
}

impl ProcessedBatch {
    pub fn controller_tokens(&self) -> impl Iterator<Item = &ControllerToken> {
        self.trajectories.iter().flat_map(|t| t.controller_tokens())
    }
}

/// Turns a sampled episode into training tokens: values from `vparams`,
/// terminal reward placement, GAE advantages and return targets.
pub fn process_episode(
    episode: &Episode,
    breakdown: RewardBreakdown,
    vparams: &ValueParams,
    vocab: &Vocabulary,
    lambda: f64,
    gamma: f64,
) -> Result<ProcessedTrajectory, TrainError> {
    let traj = &episode.trajectory;
    let values: Vec<f64> = episode
        .inputs
        .iter()
        .map(|x| policy::value(vparams, x, vocab))
        .collect();
    let rewards = assign_step_rewards(traj, &breakdown);
    let advantages = gae(&rewards, &values, lambda, gamma)?;
    let mut ctrl = 0;
    let mut tokens = Vec::with_capacity(traj.steps.len());
    for step in &traj.steps {
        match step.source {
            Source::Controller => {
                tokens.push(BatchToken::Controller(ControllerToken {
                    input: episode.inputs[ctrl].clone(),
                    token: step.token,
                    old_logprob: step.logprob.expect("controller steps carry logprobs"),
                    advantage: advantages[ctrl],
                    return_target: advantages[ctrl] + values[ctrl],
                }));
                ctrl += 1;
            }
            Source::Expert(k) => tokens.push(BatchToken::Expert {
                token: step.token,
                expert: k,
            }),
        }
    }
    Ok(ProcessedTrajectory {
        tokens,
        reward: breakdown,
    })
}

/// Token-masked clipped surrogate and its gradient.
///
/// Each trajectory contributes the mean of its controller-token terms
/// (normalizer `1 / sum_t I(y_t)`); trajectories are then averaged. Expert
/// tokens are never read.
pub fn masked_ppo_objective(
    batch: &ProcessedBatch,
    params: &PolicyParams,
    clip_eps: f64,
) -> Result<(f64, Vec<f64>), PolicyError> {
    let mut grad = vec![0.0; params.net.weights.len()];
    let n_traj = batch.trajectories.len();
    if n_traj == 0 {
        return Ok((0.0, grad));
    }
    let mut objective = 0.0;
    for traj in &batch.trajectories {
        let count = traj.mask_count();
        if count == 0 {
            continue;
        }
        let weight = 1.0 / (count as f64 * n_traj as f64);
        for tok in traj.controller_tokens() {
            let new_lp = policy::log_prob(params, &tok.input, tok.token)?;
            let ratio = importance_ratio(new_lp, tok.old_logprob);
            objective += weight * clipped_surrogate(ratio, tok.advantage, clip_eps);
            let slope = clipped_surrogate_slope(ratio, tok.advantage, clip_eps);
            if slope != 0.0 {
                // d ratio / d theta = ratio * d log pi / d theta
                policy::accumulate_log_prob_grad(params, &tok.input, tok.token, weight * slope * ratio, &mut grad)?;
            }
        }
    }
    Ok((objective, grad))
}

/// `KL(pi || ref)` at one input over legal tokens.
pub fn kl_at(params: &PolicyParams, reference: &PolicyParams, input: &PolicyInput) -> f64 {
    let p = log_softmax(&policy::logits(params, input), params.temperature).expect("legal tokens");
    let q = log_softmax(&policy::logits(reference, input), reference.temperature).expect("legal tokens");
    p.iter()
        .zip(&q)
        .filter(|(lp, _)| lp.is_finite())
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum()
}

/// Mean closed-form KL over `inputs` and its gradient with respect to the
/// live policy.
pub fn kl_term<'a, I>(params: &PolicyParams, reference: &PolicyParams, inputs: I) -> (f64, Vec<f64>)
where
    I: IntoIterator<Item = &'a PolicyInput>,
{
    let mut grad = vec![0.0; params.net.weights.len()];
    let inputs: Vec<&PolicyInput> = inputs.into_iter().collect();
    if inputs.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / inputs.len() as f64;
    let mut total = 0.0;
    for input in inputs {
        let x = input.features(&params.vocab);
        let act = params.net.forward(&x);
        let legal = params.vocab.legal_range(input.position);
        let z: Vec<f64> = act
            .out
            .iter()
            .enumerate()
            .map(|(i, &v)| if legal.contains(&i) { v } else { f64::NEG_INFINITY })
            .collect();
        let lp = log_softmax(&z, params.temperature).expect("legal tokens");
        let lq = log_softmax(&policy::logits(reference, input), reference.temperature).expect("legal tokens");
        let kl: f64 = lp
            .iter()
            .zip(&lq)
            .filter(|(a, _)| a.is_finite())
            .map(|(a, b)| a.exp() * (a - b))
            .sum();
        total += kl;
        let inv_t = 1.0 / params.temperature;
        let dout: Vec<f64> = lp
            .iter()
            .zip(&lq)
            .map(|(&a, &b)| {
                if a.is_finite() {
                    scale * a.exp() * (a - b - kl) * inv_t
                } else {
                    0.0
                }
            })
            .collect();
        params.net.accumulate_grad(&x, &act, &dout, &mut grad);
    }
    (total * scale, grad)
}

/// Mean squared error between `V(input)` and the return targets over all
/// controller tokens.
pub fn value_loss(vparams: &ValueParams, batch: &ProcessedBatch, vocab: &Vocabulary) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; vparams.net.weights.len()];
    let tokens: Vec<&ControllerToken> = batch.controller_tokens().collect();
    if tokens.is_empty() {
        return (0.0, grad);
    }
    let n = tokens.len() as f64;
    let mut loss = 0.0;
    for tok in tokens {
        let v = policy::value(vparams, &tok.input, vocab);
        let err = v - tok.return_target;
        loss += err * err / n;
        policy::accumulate_value_grad(vparams, &tok.input, vocab, 2.0 * err / n, &mut grad);
    }
    (loss, grad)
}
