use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient steps.
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => n_params,
        };
        Self {
            kind,
            t: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    /// Moves `params` along `direction` (already signed: pass the ascent
    /// direction for maximization, the negative gradient for minimization).
    pub fn step(&mut self, params: &mut [f64], direction: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, d) in params.iter_mut().zip(direction) {
                    *p += lr * d;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = direction[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] += lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Linear warm-up factor in `(0, 1]` for 1-based `step`.
pub fn warmup_factor(step: u64, warmup_ratio: f64, max_steps: u64) -> f64 {
    let warmup_steps = (warmup_ratio * max_steps as f64).ceil();
    if warmup_steps <= 1.0 {
        return 1.0;
    }
    (step as f64 / warmup_steps).min(1.0)
}
