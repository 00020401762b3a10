use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::SimRng;

/// One-hidden-layer tanh network plus a linear skip path from input to
/// output. All parameters live in a single flat vector laid out as
/// `[w1 (hidden x in), b1, w2 (out x hidden), b2, ws (out x in)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp {
    pub fn param_count(in_dim: usize, hidden: usize, out_dim: usize) -> usize {
        hidden * in_dim + hidden + out_dim * hidden + out_dim + out_dim * in_dim
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            weights: vec![0.0; Self::param_count(in_dim, hidden, out_dim)],
        }
    }

    /// Weights uniform in `[-scale, scale]`.
    pub fn uniform(in_dim: usize, hidden: usize, out_dim: usize, scale: f64, rng: &mut SimRng) -> Self {
        let mut net = Self::zeros(in_dim, hidden, out_dim);
        if scale > 0.0 {
            for w in &mut net.weights {
                *w = rng.random_range(-scale..=scale);
            }
        }
        net
    }

    pub fn shape_matches(&self) -> bool {
        self.weights.len() == Self::param_count(self.in_dim, self.hidden, self.out_dim)
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let b1 = self.hidden * self.in_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.out_dim * self.hidden;
        (b1, w2, b2, b2 + self.out_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Activations {
        debug_assert_eq!(x.len(), self.in_dim);
        let (b1, w2, b2, ws) = self.offsets();
        let w = &self.weights;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &w[j * self.in_dim..(j + 1) * self.in_dim];
                let pre = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[b1 + j];
                pre.tanh()
            })
            .collect();
        let out = (0..self.out_dim)
            .map(|o| {
                let row = &w[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                let skip = &w[ws + o * self.in_dim..ws + (o + 1) * self.in_dim];
                row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
                    + skip.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + w[b2 + o]
            })
            .collect();
        Activations { hidden, out }
    }

    /// Adds `d(sum_o dout[o] * out[o]) / d(weights)` into `grad`.
    pub fn accumulate_grad(&self, x: &[f64], act: &Activations, dout: &[f64], grad: &mut [f64]) {
        let (b1, w2, b2, ws) = self.offsets();
        let mut dh = vec![0.0; self.hidden];
        for (o, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = w2 + o * self.hidden;
            for j in 0..self.hidden {
                grad[row + j] += d * act.hidden[j];
                dh[j] += d * self.weights[row + j];
            }
            grad[b2 + o] += d;
            let skip = ws + o * self.in_dim;
            for (i, &xi) in x.iter().enumerate() {
                grad[skip + i] += d * xi;
            }
        }
        for j in 0..self.hidden {
            let dpre = dh[j] * (1.0 - act.hidden[j] * act.hidden[j]);
            if dpre == 0.0 {
                continue;
            }
            let row = j * self.in_dim;
            for (i, &xi) in x.iter().enumerate() {
                grad[row + i] += dpre * xi;
            }
            grad[b1 + j] += dpre;
        }
    }

    /// Index of the skip weight from input `i` to output `o`.
    pub fn skip_index(&self, o: usize, i: usize) -> usize {
        self.offsets().3 + o * self.in_dim + i
    }

    /// Index of output bias `o` in the flat weight vector.
    pub fn output_bias_index(&self, o: usize) -> usize {
        self.offsets().2 + o
    }
}
