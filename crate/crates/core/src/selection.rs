//! Stratified resampling, wrapper feature selection and exhaustive grid
//! search, all scored by stratified k-fold cross-validation.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::classifiers::{train, Algorithm, ModelSpec};
use crate::dataset::Dataset;
use crate::error::{ModelError, SelectionError};
use crate::seed::{self, stream};

pub const CV_FOLDS: usize = 3;
/// Mean-accuracy gap below which two selection methods count as tied.
pub const TIE_TOLERANCE: f64 = 0.005;
/// Fraction of the remaining features dropped per elimination round.
pub const RFE_STEP: f64 = 0.1;
pub const GRID_CAP: usize = 256;

pub type Split = (Vec<usize>, Vec<usize>);

fn rows_by_class(d: &Dataset) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); d.n_classes()];
    for (i, r) in d.rows.iter().enumerate() {
        by[r.class].push(i);
    }
    by
}

/// `k` (train, test) partitions. Each class is spread over the folds so its
/// per-fold counts differ by at most one.
pub fn stratified_kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>, SelectionError> {
    if k < 2 {
        return Err(SelectionError::Model(ModelError::Data(
            "need at least two folds".into(),
        )));
    }
    let by = rows_by_class(d);
    for (c, rows) in by.iter().enumerate() {
        if !rows.is_empty() && rows.len() < k {
            return Err(SelectionError::ClassTooSmall {
                class: d.class_name(c).to_string(),
                count: rows.len(),
                k,
            });
        }
    }
    let mut fold_of = vec![0usize; d.len()];
    let mut offset = 0;
    for (c, rows) in by.iter().enumerate() {
        let mut rows = rows.clone();
        rows.shuffle(&mut seed::rng(seed, stream::FOLDS, c as u64));
        for (i, r) in rows.iter().enumerate() {
            fold_of[*r] = (offset + i) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| fold_of[i] == f);
            (train, test)
        })
        .collect())
}

/// One shuffled split holding out `test_fraction` of every class.
pub fn stratified_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<Split, SelectionError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, rows) in rows_by_class(d).into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(SelectionError::ClassTooSmall {
                class: d.class_name(c).to_string(),
                count: rows.len(),
                k: 2,
            });
        }
        let mut rows = rows;
        rows.shuffle(&mut seed::rng(seed, stream::SPLIT, c as u64));
        let n_test = ((rows.len() as f64 * test_fraction).round() as usize).clamp(1, rows.len() - 1);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Train on each fold's training rows and score on its test rows.
pub fn cross_validate(spec: &ModelSpec, d: &Dataset, folds: &[Split]) -> Result<Vec<f64>, ModelError> {
    folds
        .par_iter()
        .map(|(tr, te)| {
            let test = d.subset(te);
            let m = train(spec, &d.subset(tr))?;
            Ok(accuracy(&m.predict_dataset(&test)?, &test.labels()))
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    Mean,
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionMethod {
    /// Keep features whose importance under `source` reaches the threshold.
    SelectFromModel { source: Algorithm, threshold: Threshold },
    /// Repeatedly drop the least important fraction, keeping the best
    /// cross-validated subset.
    RecursiveElimination { step_fraction: f64 },
}

impl SelectionMethod {
    /// Forest importances under mean and median thresholds, plus recursive
    /// elimination.
    pub fn default_menu() -> Vec<SelectionMethod> {
        let mut v = Vec::new();
        for source in [Algorithm::RandomForest, Algorithm::ExtraTrees] {
            for threshold in [Threshold::Mean, Threshold::Median] {
                v.push(SelectionMethod::SelectFromModel { source, threshold });
            }
        }
        v.push(SelectionMethod::RecursiveElimination {
            step_fraction: RFE_STEP,
        });
        v
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMethod::SelectFromModel { source, threshold } => {
                let t = match threshold {
                    Threshold::Mean => "mean",
                    Threshold::Median => "median",
                };
                write!(f, "sfm_{source}_{t}")
            }
            SelectionMethod::RecursiveElimination { step_fraction } => write!(f, "rfe_{step_fraction}"),
        }
    }
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(step) = s.strip_prefix("rfe_") {
            let step_fraction: f64 = step.parse().map_err(|_| format!("bad elimination step in `{s}`"))?;
            if !(step_fraction > 0.0 && step_fraction <= 1.0) {
                return Err(format!("elimination step must lie in (0, 1]: `{s}`"));
            }
            return Ok(SelectionMethod::RecursiveElimination { step_fraction });
        }
        if s == "rfe" {
            return Ok(SelectionMethod::RecursiveElimination {
                step_fraction: RFE_STEP,
            });
        }
        let rest = s
            .strip_prefix("sfm_")
            .ok_or_else(|| format!("unknown selection method `{s}`"))?;
        let (src, t) = rest
            .rsplit_once('_')
            .ok_or_else(|| format!("unknown selection method `{s}`"))?;
        let source = match src {
            "random_forest" => Algorithm::RandomForest,
            "extra_trees" => Algorithm::ExtraTrees,
            _ => return Err(format!("importance source must be random_forest or extra_trees: `{s}`")),
        };
        let threshold = match t {
            "mean" => Threshold::Mean,
            "median" => Threshold::Median,
            _ => return Err(format!("threshold must be mean or median: `{s}`")),
        };
        Ok(SelectionMethod::SelectFromModel { source, threshold })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    /// Sorted column indices.
    pub selected: Vec<usize>,
    pub cv_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    /// One entry per method that kept at least one feature.
    pub results: Vec<SelectionResult>,
    pub best: usize,
}

impl SelectionReport {
    pub fn winner(&self) -> &SelectionResult {
        &self.results[self.best]
    }

    pub fn to_csv(&self) -> String {
        let k = self.results.first().map_or(0, |r| r.fold_accuracies.len());
        let mut out = String::from("method");
        for i in 1..=k {
            let _ = write!(out, ",fold_{i}");
        }
        out.push_str(",mean,n_features,chosen\n");
        for (i, r) in self.results.iter().enumerate() {
            let _ = write!(out, "{}", r.method);
            for a in &r.fold_accuracies {
                let _ = write!(out, ",{a:.6}");
            }
            let _ = writeln!(out, ",{:.6},{},{}", r.cv_accuracy, r.selected.len(), i == self.best);
        }
        out
    }
}

fn importance_model(source: Algorithm, seed: u64) -> ModelSpec {
    ModelSpec::new(source).seeded(seed)
}

fn threshold_select(importances: &[f64], threshold: Threshold) -> Vec<usize> {
    let cut = match threshold {
        Threshold::Mean => mean(importances),
        Threshold::Median => {
            let mut s = importances.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            }
        }
    };
    (0..importances.len()).filter(|&i| importances[i] >= cut).collect()
}

fn cv_on(spec: &ModelSpec, d: &Dataset, cols: &[usize], folds: &[Split]) -> Result<Vec<f64>, SelectionError> {
    let reduced = d.select_columns(cols).map_err(|e| ModelError::Data(e.to_string()))?;
    Ok(cross_validate(spec, &reduced, folds)?)
}

fn recursive_elimination(
    spec: &ModelSpec,
    d: &Dataset,
    step_fraction: f64,
    folds: &[Split],
    seed: u64,
) -> Result<(Vec<usize>, Vec<f64>), SelectionError> {
    let ranker = if spec.algorithm.has_importances() {
        spec.clone()
    } else {
        importance_model(Algorithm::RandomForest, seed)
    };
    let mut current: Vec<usize> = (0..d.n_features()).collect();
    let mut best: Option<(Vec<usize>, Vec<f64>)> = None;
    loop {
        let accs = cv_on(spec, d, &current, folds)?;
        // Later rounds have fewer features, so ties go to them.
        if best.as_ref().is_none_or(|(_, b)| mean(&accs) >= mean(b)) {
            best = Some((current.clone(), accs));
        }
        if current.len() <= 1 {
            break;
        }
        let reduced = d
            .select_columns(&current)
            .map_err(|e| ModelError::Data(e.to_string()))?;
        let imp = train(&ranker, &reduced)?.feature_importances()?;
        let drop = ((current.len() as f64 * step_fraction).ceil() as usize).clamp(1, current.len() - 1);
        let mut order: Vec<usize> = (0..current.len()).collect();
        // Least important first; ties drop the higher column first.
        order.sort_by(|&a, &b| imp[a].total_cmp(&imp[b]).then(b.cmp(&a)));
        let mut keep: Vec<usize> = order[drop..].iter().map(|&i| current[i]).collect();
        keep.sort_unstable();
        current = keep;
    }
    Ok(best.expect("at least one round"))
}

/// Run every method, cross-validating the wrapped classifier on each
/// reduced feature set. The best mean accuracy wins; methods within
/// [`TIE_TOLERANCE`] of it yield to the one keeping fewer features.
pub fn select_features(
    d: &Dataset,
    spec: &ModelSpec,
    methods: &[SelectionMethod],
    seed: u64,
) -> Result<SelectionReport, SelectionError> {
    if methods.is_empty() {
        return Err(SelectionError::NoMethods);
    }
    let folds = stratified_kfold(d, CV_FOLDS, seed)?;
    let mut results = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let method_seed = seed::derive(seed, stream::SELECTION, mi as u64);
        let (selected, fold_accuracies) = match *method {
            SelectionMethod::SelectFromModel { source, threshold } => {
                let imp = train(&importance_model(source, method_seed), d)?.feature_importances()?;
                let cols = threshold_select(&imp, threshold);
                if cols.is_empty() {
                    continue;
                }
                let accs = cv_on(spec, d, &cols, &folds)?;
                (cols, accs)
            }
            SelectionMethod::RecursiveElimination { step_fraction } => {
                recursive_elimination(spec, d, step_fraction, &folds, method_seed)?
            }
        };
        results.push(SelectionResult {
            method: *method,
            cv_accuracy: mean(&fold_accuracies),
            selected,
            fold_accuracies,
        });
    }
    if results.is_empty() {
        return Err(SelectionError::AllEmpty);
    }
    let top = results.iter().map(|r| r.cv_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let mut best = 0;
    let mut best_key: Option<(usize, usize)> = None;
    for (i, r) in results.iter().enumerate() {
        if top - r.cv_accuracy < TIE_TOLERANCE {
            let key = (r.selected.len(), i);
            if best_key.is_none_or(|b| key < b) {
                best_key = Some(key);
                best = i;
            }
        }
    }
    Ok(SelectionReport { results, best })
}

/// Candidate values per hyperparameter.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GridSpec {
    pub axes: BTreeMap<String, Vec<String>>,
}

impl GridSpec {
    pub fn default_for(algorithm: Algorithm) -> Self {
        let axes: &[(&str, &[&str])] = match algorithm {
            Algorithm::DecisionTree => &[("max_depth", &["8", "12", "inf"])],
            Algorithm::RandomForest | Algorithm::ExtraTrees => &[("n_trees", &["50", "100"])],
            Algorithm::GradientBoosting => &[("rounds", &["100", "200"]), ("shrinkage", &["0.1", "0.3"])],
            Algorithm::BernoulliNb => &[("alpha", &["0.5", "1.0"])],
            Algorithm::Knn => &[("k", &["1", "5", "11"])],
            Algorithm::LogisticRegression => &[("l2", &["1e-4", "1e-2"])],
            Algorithm::Perceptron => &[("epochs", &["10", "20"])],
        };
        GridSpec {
            axes: axes
                .iter()
                .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
        }
    }

    /// Parse `key=v1|v2;key2=v3` text.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut axes = BTreeMap::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, vs) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=v1|v2, found `{part}`"))?;
            let values: Vec<String> = vs.split('|').map(|v| v.trim().to_string()).collect();
            if values.iter().any(String::is_empty) {
                return Err(format!("empty value in `{part}`"));
            }
            axes.insert(k.trim().to_string(), values);
        }
        Ok(GridSpec { axes })
    }

    pub fn size(&self) -> usize {
        if self.axes.is_empty() {
            return 0;
        }
        self.axes.values().map(Vec::len).product()
    }

    /// Every combination; keys in sorted order, the last key varying
    /// fastest.
    pub fn points(&self) -> Vec<BTreeMap<String, String>> {
        let mut out = vec![BTreeMap::new()];
        for (k, vs) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    vs.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(k.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub hyperparameters: BTreeMap<String, String>,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub algorithm: Algorithm,
    pub points: Vec<GridPoint>,
    pub best: usize,
}

impl GridResult {
    pub fn best_spec(&self, seed: u64) -> ModelSpec {
        ModelSpec {
            algorithm: self.algorithm,
            hyperparameters: self.points[self.best].hyperparameters.clone(),
            rng_seed: seed,
        }
    }

    pub fn to_csv(&self) -> String {
        let k = self.points.first().map_or(0, |p| p.fold_accuracies.len());
        let mut out = String::from("point");
        for i in 1..=k {
            let _ = write!(out, ",fold_{i}");
        }
        out.push_str(",mean,chosen\n");
        for (i, p) in self.points.iter().enumerate() {
            let kv: Vec<String> = p.hyperparameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = write!(out, "{}", kv.join(";"));
            for a in &p.fold_accuracies {
                let _ = write!(out, ",{a:.6}");
            }
            let _ = writeln!(out, ",{:.6},{}", p.mean, i == self.best);
        }
        out
    }
}

/// Cross-validate every grid point; the first point with the highest mean
/// wins.
pub fn grid_search(
    d: &Dataset,
    algorithm: Algorithm,
    grid: &GridSpec,
    seed: u64,
) -> Result<GridResult, SelectionError> {
    let size = grid.size();
    if size == 0 {
        return Err(SelectionError::EmptyGrid);
    }
    if size > GRID_CAP {
        return Err(SelectionError::GridTooLarge { size, cap: GRID_CAP });
    }
    let folds = stratified_kfold(d, CV_FOLDS, seed)?;
    let specs: Vec<ModelSpec> = grid
        .points()
        .into_iter()
        .map(|hyperparameters| ModelSpec {
            algorithm,
            hyperparameters,
            rng_seed: seed,
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    let points: Vec<GridPoint> = specs
        .par_iter()
        .map(|s| {
            let fold_accuracies = cross_validate(s, d, &folds)?;
            Ok(GridPoint {
                hyperparameters: s.hyperparameters.clone(),
                mean: mean(&fold_accuracies),
                fold_accuracies,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean > points[best].mean {
            best = i;
        }
    }
    Ok(GridResult {
        algorithm,
        points,
        best,
    })
}
