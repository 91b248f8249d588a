//! CART trees over binary features: Gini trees for classification and
//! squared-error trees for boosting. Each split tests one column for 1.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bits::BitRow;
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        /// Child for rows with the feature unset.
        absent: usize,
        /// Child for rows with the feature set.
        present: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, row: &BitRow) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    absent,
                    present,
                } => i = if row.get(*feature) { *present } else { *absent },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { absent, present, .. } => 1 + go(t, *absent).max(go(t, *present)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Number of non-constant columns examined per node; `None` for all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

/// Per-node sparse tallies of how many rows (per class, or weighted sums)
/// have each column set. Reset through a touched list so nodes stay cheap
/// on wide vocabularies.
struct Tally {
    width: usize,
    cells: Vec<f64>,
    counts: Vec<usize>,
    touched: Vec<usize>,
}

impl Tally {
    fn new(n_features: usize, width: usize) -> Self {
        Tally {
            width,
            cells: vec![0.0; n_features * width],
            counts: vec![0; n_features],
            touched: Vec::new(),
        }
    }

    fn add(&mut self, feature: usize, slot: usize, v: f64) {
        if self.counts[feature] == 0 {
            self.touched.push(feature);
        }
        self.counts[feature] += 1;
        self.cells[feature * self.width + slot] += v;
    }

    fn row(&self, feature: usize) -> &[f64] {
        &self.cells[feature * self.width..(feature + 1) * self.width]
    }

    fn clear(&mut self) {
        for &f in &self.touched {
            self.counts[f] = 0;
            self.cells[f * self.width..(f + 1) * self.width].fill(0.0);
        }
        self.touched.clear();
    }
}

/// Non-constant columns of the node in ascending order, optionally
/// subsampled.
fn candidates(tally: &Tally, n: usize, max_features: Option<usize>, rng: Option<&mut Rng>) -> Vec<usize> {
    let mut c: Vec<usize> = tally.touched.iter().copied().filter(|&f| tally.counts[f] < n).collect();
    c.sort_unstable();
    if let (Some(m), Some(rng)) = (max_features, rng) {
        if m < c.len() {
            let mut picked: Vec<usize> = sample(rng, c.len(), m).into_iter().map(|i| c[i]).collect();
            picked.sort_unstable();
            return picked;
        }
    }
    c
}

fn gini(counts: &[f64], n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

fn partition(x: &[BitRow], rows: &[usize], feature: usize) -> (Vec<usize>, Vec<usize>) {
    rows.iter().partition(|&&r| !x[r].get(feature))
}

struct Pending {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
}

fn push_node(nodes: &mut Vec<Node>) -> usize {
    nodes.push(Node::Leaf { value: Vec::new() });
    nodes.len() - 1
}

/// Grow a Gini tree on `rows` (repeats allowed, as from a bootstrap).
/// Returns the tree and unnormalized impurity-decrease importances.
pub fn grow_classifier(
    x: &[BitRow],
    y: &[usize],
    rows: Vec<usize>,
    n_classes: usize,
    n_features: usize,
    params: &TreeParams,
    mut rng: Option<&mut Rng>,
) -> (Tree, Vec<f64>) {
    let mut importances = vec![0.0; n_features];
    let mut nodes = Vec::new();
    let mut tally = Tally::new(n_features, n_classes);
    let root = push_node(&mut nodes);
    let mut stack = vec![Pending {
        node: root,
        rows,
        depth: 0,
    }];
    while let Some(Pending { node, rows, depth }) = stack.pop() {
        let n = rows.len();
        let mut counts = vec![0.0; n_classes];
        for &r in &rows {
            counts[y[r]] += 1.0;
        }
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let leaf = |counts: &[f64]| Node::Leaf {
            value: counts.iter().map(|c| c / n.max(1) as f64).collect(),
        };
        if pure || n < params.min_samples_split || params.max_depth.is_some_and(|d| depth >= d) {
            nodes[node] = leaf(&counts);
            continue;
        }
        for &r in &rows {
            for f in x[r].ones() {
                tally.add(f, y[r], 1.0);
            }
        }
        let nf = n as f64;
        let parent = gini(&counts, nf);
        let mut best: Option<(usize, f64)> = None;
        let mut present = vec![0.0; n_classes];
        for f in candidates(&tally, n, params.max_features, rng.as_deref_mut()) {
            present.copy_from_slice(tally.row(f));
            let n1 = tally.counts[f] as f64;
            let absent: Vec<f64> = counts.iter().zip(&present).map(|(a, b)| a - b).collect();
            let gain = parent - (n1 / nf) * gini(&present, n1) - ((nf - n1) / nf) * gini(&absent, nf - n1);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((f, gain));
            }
        }
        tally.clear();
        match best {
            Some((feature, gain)) if gain > 1e-12 => {
                importances[feature] += nf * gain;
                let (rows_absent, rows_present) = partition(x, &rows, feature);
                let a = push_node(&mut nodes);
                let p = push_node(&mut nodes);
                nodes[node] = Node::Split {
                    feature,
                    absent: a,
                    present: p,
                };
                stack.push(Pending {
                    node: p,
                    rows: rows_present,
                    depth: depth + 1,
                });
                stack.push(Pending {
                    node: a,
                    rows: rows_absent,
                    depth: depth + 1,
                });
            }
            _ => nodes[node] = leaf(&counts),
        }
    }
    (Tree { nodes }, importances)
}

/// Grow a squared-error tree on `targets`; leaf values come from
/// `leaf_value(rows)`.
pub fn grow_regressor(
    x: &[BitRow],
    targets: &[f64],
    rows: Vec<usize>,
    n_features: usize,
    params: &TreeParams,
    leaf_value: impl Fn(&[usize]) -> f64,
) -> (Tree, Vec<f64>) {
    let mut importances = vec![0.0; n_features];
    let mut nodes = Vec::new();
    let mut tally = Tally::new(n_features, 1);
    let root = push_node(&mut nodes);
    let mut stack = vec![Pending {
        node: root,
        rows,
        depth: 0,
    }];
    while let Some(Pending { node, rows, depth }) = stack.pop() {
        let n = rows.len();
        let leaf = |rows: &[usize]| Node::Leaf {
            value: vec![leaf_value(rows)],
        };
        if n < params.min_samples_split || params.max_depth.is_some_and(|d| depth >= d) {
            nodes[node] = leaf(&rows);
            continue;
        }
        let total: f64 = rows.iter().map(|&r| targets[r]).sum();
        for &r in &rows {
            for f in x[r].ones() {
                tally.add(f, 0, targets[r]);
            }
        }
        let nf = n as f64;
        let base = total * total / nf;
        let mut best: Option<(usize, f64)> = None;
        for f in candidates(&tally, n, None, None) {
            let s1 = tally.row(f)[0];
            let n1 = tally.counts[f] as f64;
            let s0 = total - s1;
            let gain = s1 * s1 / n1 + s0 * s0 / (nf - n1) - base;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((f, gain));
            }
        }
        tally.clear();
        match best {
            Some((feature, gain)) if gain > 1e-12 => {
                importances[feature] += gain;
                let (rows_absent, rows_present) = partition(x, &rows, feature);
                let a = push_node(&mut nodes);
                let p = push_node(&mut nodes);
                nodes[node] = Node::Split {
                    feature,
                    absent: a,
                    present: p,
                };
                stack.push(Pending {
                    node: p,
                    rows: rows_present,
                    depth: depth + 1,
                });
                stack.push(Pending {
                    node: a,
                    rows: rows_absent,
                    depth: depth + 1,
                });
            }
            _ => nodes[node] = leaf(&rows),
        }
    }
    (Tree { nodes }, importances)
}
