//! Multiclass gradient boosting: one squared-error tree per class and round,
//! fitted to softmax residuals, with Newton leaf steps and shrinkage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_regressor, Tree, TreeParams};
use super::{log_softmax_normalize, LOG_ZERO};
use crate::bits::BitRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    /// Log class priors.
    pub init: Vec<f64>,
    pub shrinkage: f64,
    /// `rounds[m][k]` is the tree of class `k` in round `m`.
    pub rounds: Vec<Vec<Tree>>,
}

impl GradientBoosting {
    pub fn fit(
        x: &[BitRow],
        y: &[usize],
        n_classes: usize,
        n_features: usize,
        rounds: usize,
        shrinkage: f64,
        params: &TreeParams,
    ) -> (Self, Vec<f64>) {
        let n = y.len();
        let mut counts = vec![0usize; n_classes];
        for &c in y {
            counts[c] += 1;
        }
        let init: Vec<f64> = counts
            .iter()
            .map(|&k| if k == 0 { LOG_ZERO } else { (k as f64 / n as f64).ln() })
            .collect();
        let mut raw: Vec<Vec<f64>> = vec![init.clone(); n];
        let mut importances = vec![0.0; n_features];
        let mut model = GradientBoosting {
            init,
            shrinkage,
            rounds: Vec::with_capacity(rounds),
        };
        let kf = n_classes as f64;
        for _ in 0..rounds {
            let probs: Vec<Vec<f64>> = raw.iter().map(|r| log_softmax_normalize(r)).collect();
            let trees: Vec<(Tree, Vec<f64>)> = (0..n_classes)
                .into_par_iter()
                .map(|k| {
                    if counts[k] == 0 {
                        return (
                            Tree {
                                nodes: vec![super::tree::Node::Leaf { value: vec![0.0] }],
                            },
                            vec![0.0; n_features],
                        );
                    }
                    let resid: Vec<f64> = (0..n).map(|i| f64::from(u8::from(y[i] == k)) - probs[i][k]).collect();
                    let leaf = |rows: &[usize]| {
                        let num: f64 = rows.iter().map(|&r| resid[r]).sum();
                        let den: f64 = rows.iter().map(|&r| resid[r].abs() * (1.0 - resid[r].abs())).sum();
                        if den < 1e-150 {
                            0.0
                        } else {
                            (kf - 1.0) / kf * num / den
                        }
                    };
                    grow_regressor(x, &resid, (0..n).collect(), n_features, params, leaf)
                })
                .collect();
            let mut round = Vec::with_capacity(n_classes);
            for (k, (tree, imp)) in trees.into_iter().enumerate() {
                for (a, b) in importances.iter_mut().zip(&imp) {
                    *a += b;
                }
                for (i, row) in x.iter().enumerate() {
                    raw[i][k] += shrinkage * tree.leaf_value(row)[0];
                }
                round.push(tree);
            }
            model.rounds.push(round);
        }
        (model, importances)
    }

    pub fn raw_scores(&self, row: &BitRow) -> Vec<f64> {
        let mut s = self.init.clone();
        for round in &self.rounds {
            for (k, t) in round.iter().enumerate() {
                s[k] += self.shrinkage * t.leaf_value(row)[0];
            }
        }
        s
    }

    pub fn predict_proba(&self, row: &BitRow) -> Vec<f64> {
        log_softmax_normalize(&self.raw_scores(row))
    }
}
