//! Bernoulli naive Bayes with Laplace smoothing.

use serde::{Deserialize, Serialize};

use super::{log_softmax_normalize, LOG_ZERO};
use crate::bits::BitRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliNb {
    pub n_classes: usize,
    pub n_features: usize,
    pub log_prior: Vec<f64>,
    /// `log p(x_j = 1 | c)`, class-major.
    pub log_p: Vec<f64>,
    /// `log p(x_j = 0 | c)`, class-major.
    pub log_q: Vec<f64>,
}

impl BernoulliNb {
    pub fn fit(x: &[BitRow], y: &[usize], n_classes: usize, n_features: usize, alpha: f64) -> Self {
        let mut class_n = vec![0usize; n_classes];
        let mut ones = vec![0usize; n_classes * n_features];
        for (row, &c) in x.iter().zip(y) {
            class_n[c] += 1;
            for j in row.ones() {
                ones[c * n_features + j] += 1;
            }
        }
        let n = y.len() as f64;
        let log_prior = class_n
            .iter()
            .map(|&k| if k == 0 { LOG_ZERO } else { (k as f64 / n).ln() })
            .collect();
        let mut log_p = vec![0.0; n_classes * n_features];
        let mut log_q = vec![0.0; n_classes * n_features];
        for c in 0..n_classes {
            let denom = class_n[c] as f64 + 2.0 * alpha;
            for j in 0..n_features {
                let p = (ones[c * n_features + j] as f64 + alpha) / denom;
                log_p[c * n_features + j] = p.ln();
                log_q[c * n_features + j] = (1.0 - p).ln();
            }
        }
        BernoulliNb {
            n_classes,
            n_features,
            log_prior,
            log_p,
            log_q,
        }
    }

    /// `log p(c) + log p(x | c)` per class.
    pub fn joint_log_likelihood(&self, row: &BitRow) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let base = c * self.n_features;
                let mut s = self.log_prior[c];
                for j in 0..self.n_features {
                    s += if row.get(j) {
                        self.log_p[base + j]
                    } else {
                        self.log_q[base + j]
                    };
                }
                s
            })
            .collect()
    }

    pub fn predict_proba(&self, row: &BitRow) -> Vec<f64> {
        log_softmax_normalize(&self.joint_log_likelihood(row))
    }
}
