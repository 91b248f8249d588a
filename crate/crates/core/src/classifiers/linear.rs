//! Multinomial logistic regression (batch gradient descent, L2) and a
//! one-vs-rest perceptron.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::log_softmax_normalize;
use crate::bits::BitRow;
use crate::seed::{self, stream};

/// Weights are feature-major (`w[j * C + c]`); biases follow.
fn linear_scores(w: &[f64], b: &[f64], row: &BitRow) -> Vec<f64> {
    let c = b.len();
    let mut s = b.to_vec();
    for j in row.ones() {
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += w[j * c + k];
        }
    }
    s
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` and its gradient. `params`
/// holds `W` (feature-major, `n_features * n_classes`) then the biases.
pub fn logistic_objective(params: &[f64], x: &[BitRow], y: &[usize], n_classes: usize, l2: f64) -> (f64, Vec<f64>) {
    let nw = params.len() - n_classes;
    let (w, b) = params.split_at(nw);
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let n = x.len() as f64;
    for (row, &yi) in x.iter().zip(y) {
        let p = log_softmax_normalize(&linear_scores(w, b, row));
        loss -= p[yi].max(f64::MIN_POSITIVE).ln();
        let mut delta = p;
        delta[yi] -= 1.0;
        for j in row.ones() {
            for (k, d) in delta.iter().enumerate() {
                grad[j * n_classes + k] += d / n;
            }
        }
        for (k, d) in delta.iter().enumerate() {
            grad[nw + k] += d / n;
        }
    }
    loss /= n;
    let mut reg = 0.0;
    for (g, wi) in grad[..nw].iter_mut().zip(w) {
        *g += l2 * wi;
        reg += wi * wi;
    }
    (loss + 0.5 * l2 * reg, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Epochs actually run.
    pub epochs_run: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub tol: f64,
}

impl LogisticRegression {
    pub fn fit(x: &[BitRow], y: &[usize], n_classes: usize, n_features: usize, p: &LogisticParams) -> Self {
        let mut params = vec![0.0; n_features * n_classes + n_classes];
        let mut epochs_run = 0;
        for _ in 0..p.epochs {
            let (_, g) = logistic_objective(&params, x, y, n_classes, p.l2);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < p.tol {
                break;
            }
            for (w, gi) in params.iter_mut().zip(&g) {
                *w -= p.learning_rate * gi;
            }
            epochs_run += 1;
        }
        let bias = params.split_off(n_features * n_classes);
        LogisticRegression {
            weights: params,
            bias,
            epochs_run,
        }
    }

    pub fn predict_proba(&self, row: &BitRow) -> Vec<f64> {
        log_softmax_normalize(&linear_scores(&self.weights, &self.bias, row))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perceptron {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Perceptron {
    /// One binary perceptron per class, trained on a shared seeded row order.
    pub fn fit(x: &[BitRow], y: &[usize], n_classes: usize, n_features: usize, epochs: usize, seed: u64) -> Self {
        let mut w = vec![0.0; n_features * n_classes];
        let mut b = vec![0.0; n_classes];
        let mut order: Vec<usize> = (0..x.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut seed::rng(seed, stream::PERCEPTRON, epoch as u64));
            for &i in &order {
                let s = linear_scores(&w, &b, &x[i]);
                for (c, sc) in s.iter().enumerate() {
                    let t = if y[i] == c { 1.0 } else { -1.0 };
                    if t * sc <= 0.0 {
                        for j in x[i].ones() {
                            w[j * n_classes + c] += t;
                        }
                        b[c] += t;
                    }
                }
            }
        }
        Perceptron { weights: w, bias: b }
    }

    pub fn scores(&self, row: &BitRow) -> Vec<f64> {
        linear_scores(&self.weights, &self.bias, row)
    }
}
