//! k-nearest neighbours under Hamming distance.

use serde::{Deserialize, Serialize};

use crate::bits::BitRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub n_classes: usize,
    pub rows: Vec<BitRow>,
    pub labels: Vec<usize>,
}

impl Knn {
    pub fn fit(x: &[BitRow], y: &[usize], n_classes: usize, k: usize) -> Self {
        Knn {
            k,
            n_classes,
            rows: x.to_vec(),
            labels: y.to_vec(),
        }
    }

    /// Vote shares among the k nearest rows; every row tied with the k-th
    /// distance votes too.
    pub fn predict_proba(&self, row: &BitRow) -> Vec<f64> {
        let d: Vec<usize> = self.rows.iter().map(|r| r.hamming(row)).collect();
        let k = self.k.min(d.len());
        let mut sorted = d.clone();
        let (_, kth, _) = sorted.select_nth_unstable(k - 1);
        let cutoff = *kth;
        let mut votes = vec![0.0; self.n_classes];
        let mut total = 0.0;
        for (dist, &c) in d.iter().zip(&self.labels) {
            if *dist <= cutoff {
                votes[c] += 1.0;
                total += 1.0;
            }
        }
        votes.iter().map(|v| v / total).collect()
    }
}
