//! Classifiers over binary feature rows with one train/predict contract:
//! Gini decision trees, random forests, extra trees, gradient boosting,
//! Bernoulli naive Bayes, Hamming kNN, multinomial logistic regression and a
//! one-vs-rest perceptron.
//!
//! Every argmax breaks ties toward the lowest class index, i.e. canonical
//! class order.

pub mod boost;
pub mod knn;
pub mod linear;
pub mod nb;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use boost::GradientBoosting;
pub use knn::Knn;
pub use linear::{logistic_objective, LogisticParams, LogisticRegression, Perceptron};
pub use nb::BernoulliNb;
pub use tree::{Node, Tree, TreeParams};

use crate::bits::BitRow;
use crate::dataset::Dataset;
use crate::error::ModelError;
use crate::label::Scheme;
use crate::seed::{self, stream};

/// Finite stand-in for `ln 0`, so fitted state stays JSON-representable.
pub const LOG_ZERO: f64 = -1e300;

pub const MODEL_FORMAT: &str = "retypelab-model";
pub const MODEL_VERSION: u32 = 1;

/// Softmax of log-scores.
pub fn log_softmax_normalize(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DecisionTree,
    RandomForest,
    ExtraTrees,
    GradientBoosting,
    BernoulliNb,
    Knn,
    LogisticRegression,
    Perceptron,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::DecisionTree,
        Algorithm::RandomForest,
        Algorithm::ExtraTrees,
        Algorithm::GradientBoosting,
        Algorithm::BernoulliNb,
        Algorithm::Knn,
        Algorithm::LogisticRegression,
        Algorithm::Perceptron,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DecisionTree => "decision_tree",
            Algorithm::RandomForest => "random_forest",
            Algorithm::ExtraTrees => "extra_trees",
            Algorithm::GradientBoosting => "gradient_boosting",
            Algorithm::BernoulliNb => "bernoulli_nb",
            Algorithm::Knn => "knn",
            Algorithm::LogisticRegression => "logistic_regression",
            Algorithm::Perceptron => "perceptron",
        }
    }

    /// Hyperparameters and their defaults.
    pub fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Algorithm::DecisionTree => &[("max_depth", "inf"), ("min_samples_split", "2")],
            Algorithm::RandomForest => &[
                ("n_trees", "100"),
                ("max_depth", "12"),
                ("min_samples_split", "2"),
                ("max_features", "sqrt"),
                ("bootstrap", "true"),
            ],
            Algorithm::ExtraTrees => &[
                ("n_trees", "100"),
                ("max_depth", "12"),
                ("min_samples_split", "2"),
                ("max_features", "sqrt"),
                ("bootstrap", "false"),
            ],
            Algorithm::GradientBoosting => &[
                ("rounds", "100"),
                ("shrinkage", "0.1"),
                ("max_depth", "3"),
                ("min_samples_split", "2"),
            ],
            Algorithm::BernoulliNb => &[("alpha", "1.0")],
            Algorithm::Knn => &[("k", "5")],
            Algorithm::LogisticRegression => &[
                ("learning_rate", "0.1"),
                ("l2", "1e-4"),
                ("epochs", "500"),
                ("tol", "1e-6"),
            ],
            Algorithm::Perceptron => &[("epochs", "20")],
        }
    }

    pub fn has_importances(self) -> bool {
        matches!(
            self,
            Algorithm::DecisionTree | Algorithm::RandomForest | Algorithm::ExtraTrees | Algorithm::GradientBoosting
        )
    }

    pub fn has_proba(self) -> bool {
        self != Algorithm::Perceptron
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::UnknownAlgorithm(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> Option<usize> {
        match self {
            MaxFeatures::All => None,
            MaxFeatures::Sqrt => Some(((n_features as f64).sqrt() as usize).max(1)),
            MaxFeatures::Count(n) => Some(n.max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub algorithm: Algorithm,
    /// Overrides of the algorithm's defaults, as text.
    pub hyperparameters: BTreeMap<String, String>,
    pub rng_seed: u64,
}

fn hp_err(key: &str, message: impl Into<String>) -> ModelError {
    ModelError::Hyperparameter {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ModelSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        ModelSpec {
            algorithm,
            hyperparameters: BTreeMap::new(),
            rng_seed: 0,
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.hyperparameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Effective value of a hyperparameter.
    pub fn get(&self, key: &str) -> Result<&str, ModelError> {
        if let Some(v) = self.hyperparameters.get(key) {
            return Ok(v);
        }
        self.algorithm
            .defaults()
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| hp_err(key, format!("not a hyperparameter of {}", self.algorithm)))
    }

    fn usize(&self, key: &str, min: usize) -> Result<usize, ModelError> {
        let v: usize = self.get(key)?.parse().map_err(|_| hp_err(key, "expected an integer"))?;
        if v < min {
            return Err(hp_err(key, format!("must be at least {min}")));
        }
        Ok(v)
    }

    fn f64(&self, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64, ModelError> {
        let v: f64 = self.get(key)?.parse().map_err(|_| hp_err(key, "expected a number"))?;
        if !v.is_finite() || !ok(v) {
            return Err(hp_err(key, format!("must be {range}")));
        }
        Ok(v)
    }

    fn depth(&self, key: &str) -> Result<Option<usize>, ModelError> {
        match self.get(key)? {
            "inf" | "none" => Ok(None),
            v => v
                .parse()
                .map(Some)
                .map_err(|_| hp_err(key, "expected an integer or `inf`")),
        }
    }

    fn bool(&self, key: &str) -> Result<bool, ModelError> {
        match self.get(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(hp_err(key, "expected true or false")),
        }
    }

    fn max_features(&self) -> Result<MaxFeatures, ModelError> {
        match self.get("max_features")? {
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "all" => Ok(MaxFeatures::All),
            v => match v.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(MaxFeatures::Count(n)),
                _ => Err(hp_err("max_features", "expected sqrt, all or a positive integer")),
            },
        }
    }

    fn tree_params(&self, n_features: usize) -> Result<TreeParams, ModelError> {
        let max_features = match self.algorithm {
            Algorithm::RandomForest | Algorithm::ExtraTrees => self.max_features()?.resolve(n_features),
            _ => None,
        };
        Ok(TreeParams {
            max_depth: self.depth("max_depth")?,
            min_samples_split: self.usize("min_samples_split", 2)?,
            max_features,
        })
    }

    /// Check every hyperparameter name and value.
    pub fn validate(&self) -> Result<(), ModelError> {
        for key in self.hyperparameters.keys() {
            if !self.algorithm.defaults().iter().any(|(k, _)| k == key) {
                return Err(hp_err(key, format!("not a hyperparameter of {}", self.algorithm)));
            }
        }
        match self.algorithm {
            Algorithm::DecisionTree => {
                self.tree_params(1)?;
            }
            Algorithm::RandomForest | Algorithm::ExtraTrees => {
                self.tree_params(1)?;
                self.usize("n_trees", 1)?;
                self.bool("bootstrap")?;
            }
            Algorithm::GradientBoosting => {
                self.tree_params(1)?;
                self.usize("rounds", 0)?;
                self.f64("shrinkage", |v| v > 0.0 && v <= 1.0, "in (0, 1]")?;
            }
            Algorithm::BernoulliNb => {
                self.f64("alpha", |v| v > 0.0, "positive")?;
            }
            Algorithm::Knn => {
                self.usize("k", 1)?;
            }
            Algorithm::LogisticRegression => {
                self.logistic_params()?;
            }
            Algorithm::Perceptron => {
                self.usize("epochs", 0)?;
            }
        }
        Ok(())
    }

    fn logistic_params(&self) -> Result<LogisticParams, ModelError> {
        Ok(LogisticParams {
            learning_rate: self.f64("learning_rate", |v| v > 0.0, "positive")?,
            l2: self.f64("l2", |v| v >= 0.0, "nonnegative")?,
            epochs: self.usize("epochs", 0)?,
            tol: self.f64("tol", |v| v >= 0.0, "nonnegative")?,
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.algorithm.name())?;
        if !self.hyperparameters.is_empty() {
            let kv: Vec<String> = self.hyperparameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "{{{}}}", kv.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedState {
    Tree { tree: Tree },
    Forest { trees: Vec<Tree> },
    Boosting(GradientBoosting),
    NaiveBayes(BernoulliNb),
    Knn(Knn),
    Logistic(LogisticRegression),
    Perceptron(Perceptron),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// First 64 bits of the vocabulary's SHA-256, hex.
    pub hash: String,
    pub size: usize,
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.hash, self.size)
    }
}

impl Fingerprint {
    pub fn of(dataset: &Dataset) -> Self {
        Fingerprint {
            hash: dataset.vocabulary.fingerprint(),
            size: dataset.n_features(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub scheme: Scheme,
    pub classes: Vec<String>,
    pub fingerprint: Fingerprint,
    /// Feature names, so raw listings can be vectorized at predict time.
    pub vocabulary: Vec<String>,
    /// Normalized impurity-decrease importances (tree family only).
    pub importances: Option<Vec<f64>>,
    pub state: FittedState,
}

fn normalize_importances(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.into_iter().map(|v| v / total).collect()
    } else {
        let n = raw.len().max(1) as f64;
        vec![1.0 / n; raw.len()]
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn fit_forest(
    spec: &ModelSpec,
    x: &[BitRow],
    y: &[usize],
    n_classes: usize,
    n_features: usize,
) -> Result<(Vec<Tree>, Vec<f64>), ModelError> {
    let params = spec.tree_params(n_features)?;
    let n_trees = spec.usize("n_trees", 1)?;
    let bootstrap = spec.bool("bootstrap")?;
    let members: Vec<(Tree, Vec<f64>)> = (0..n_trees)
        .into_par_iter()
        .map(|m| {
            let mut rng = seed::rng(spec.rng_seed, stream::ENSEMBLE_MEMBER, m as u64);
            let rows: Vec<usize> = if bootstrap {
                (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let (t, imp) = tree::grow_classifier(x, y, rows, n_classes, n_features, &params, Some(&mut rng));
            (t, normalize_importances(imp))
        })
        .collect();
    let mut importances = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(n_trees);
    for (t, imp) in members {
        add_into(&mut importances, &imp);
        trees.push(t);
    }
    Ok((trees, importances))
}

/// Fit on raw rows. `y` holds class indices below `n_classes`.
pub fn fit(
    spec: &ModelSpec,
    x: &[BitRow],
    y: &[usize],
    n_classes: usize,
    n_features: usize,
) -> Result<(FittedState, Option<Vec<f64>>), ModelError> {
    spec.validate()?;
    if x.is_empty() {
        return Err(ModelError::Data("no training rows".into()));
    }
    if n_features == 0 {
        return Err(ModelError::Data("empty vocabulary".into()));
    }
    if x.len() != y.len() || y.iter().any(|&c| c >= n_classes) {
        return Err(ModelError::Data("labels do not match rows".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != n_features) {
        return Err(ModelError::Dimension {
            expected: n_features,
            got: r.len(),
        });
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(ModelError::Data("training data holds a single class".into()));
    }
    let (state, importances) = match spec.algorithm {
        Algorithm::DecisionTree => {
            let params = spec.tree_params(n_features)?;
            let (tree, imp) = tree::grow_classifier(x, y, (0..x.len()).collect(), n_classes, n_features, &params, None);
            (FittedState::Tree { tree }, Some(imp))
        }
        Algorithm::RandomForest | Algorithm::ExtraTrees => {
            let (trees, imp) = fit_forest(spec, x, y, n_classes, n_features)?;
            (FittedState::Forest { trees }, Some(imp))
        }
        Algorithm::GradientBoosting => {
            let params = spec.tree_params(n_features)?;
            let rounds = spec.usize("rounds", 0)?;
            let shrinkage = spec.f64("shrinkage", |v| v > 0.0 && v <= 1.0, "in (0, 1]")?;
            let (m, imp) = GradientBoosting::fit(x, y, n_classes, n_features, rounds, shrinkage, &params);
            (FittedState::Boosting(m), Some(imp))
        }
        Algorithm::BernoulliNb => {
            let alpha = spec.f64("alpha", |v| v > 0.0, "positive")?;
            (
                FittedState::NaiveBayes(BernoulliNb::fit(x, y, n_classes, n_features, alpha)),
                None,
            )
        }
        Algorithm::Knn => (FittedState::Knn(Knn::fit(x, y, n_classes, spec.usize("k", 1)?)), None),
        Algorithm::LogisticRegression => {
            let p = spec.logistic_params()?;
            (
                FittedState::Logistic(LogisticRegression::fit(x, y, n_classes, n_features, &p)),
                None,
            )
        }
        Algorithm::Perceptron => {
            let epochs = spec.usize("epochs", 0)?;
            (
                FittedState::Perceptron(Perceptron::fit(x, y, n_classes, n_features, epochs, spec.rng_seed)),
                None,
            )
        }
    };
    Ok((state, importances.map(normalize_importances)))
}

/// Train on a dataset. Deterministic for a fixed spec (including its seed).
pub fn train(spec: &ModelSpec, dataset: &Dataset) -> Result<TrainedModel, ModelError> {
    let x: Vec<BitRow> = dataset.rows.iter().map(|r| r.bits.clone()).collect();
    let y = dataset.labels();
    let (state, importances) = fit(spec, &x, &y, dataset.n_classes(), dataset.n_features())?;
    Ok(TrainedModel {
        spec: spec.clone(),
        scheme: dataset.scheme,
        classes: dataset.scheme.class_names().iter().map(|s| s.to_string()).collect(),
        fingerprint: Fingerprint::of(dataset),
        vocabulary: dataset.vocabulary.names().to_vec(),
        importances,
        state,
    })
}

fn forest_proba(trees: &[Tree], row: &BitRow, n_classes: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_classes];
    for t in trees {
        add_into(&mut p, t.leaf_value(row));
    }
    let n = trees.len() as f64;
    p.into_iter().map(|v| v / n).collect()
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.fingerprint.size
    }

    fn check(&self, row: &BitRow) -> Result<(), ModelError> {
        if row.len() != self.n_features() {
            return Err(ModelError::Dimension {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Class distribution, where the algorithm defines one.
    pub fn predict_proba(&self, row: &BitRow) -> Result<Option<Vec<f64>>, ModelError> {
        self.check(row)?;
        let c = self.classes.len();
        Ok(match &self.state {
            FittedState::Tree { tree } => Some(tree.leaf_value(row).to_vec()),
            FittedState::Forest { trees } => Some(forest_proba(trees, row, c)),
            FittedState::Boosting(m) => Some(m.predict_proba(row)),
            FittedState::NaiveBayes(m) => Some(m.predict_proba(row)),
            FittedState::Knn(m) => Some(m.predict_proba(row)),
            FittedState::Logistic(m) => Some(m.predict_proba(row)),
            FittedState::Perceptron(_) => None,
        })
    }

    /// Per-class scores: probabilities, or raw margins for the perceptron.
    pub fn scores(&self, row: &BitRow) -> Result<Vec<f64>, ModelError> {
        match &self.state {
            FittedState::Perceptron(m) => {
                self.check(row)?;
                Ok(m.scores(row))
            }
            _ => Ok(self.predict_proba(row)?.expect("probabilistic model")),
        }
    }

    pub fn predict(&self, row: &BitRow) -> Result<usize, ModelError> {
        Ok(argmax(&self.scores(row)?))
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<(), ModelError> {
        let fp = Fingerprint::of(dataset);
        if fp != self.fingerprint {
            return Err(ModelError::Fingerprint {
                model: self.fingerprint.to_string(),
                dataset: fp.to_string(),
            });
        }
        if dataset.scheme != self.scheme {
            return Err(ModelError::Data(format!(
                "model predicts {} classes, dataset carries {}",
                self.scheme, dataset.scheme
            )));
        }
        Ok(())
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<usize>, ModelError> {
        self.check_dataset(dataset)?;
        dataset.rows.par_iter().map(|r| self.predict(&r.bits)).collect()
    }

    pub fn feature_importances(&self) -> Result<Vec<f64>, ModelError> {
        self.importances
            .clone()
            .ok_or_else(|| ModelError::Unsupported(self.spec.algorithm.name().to_string()))
    }

    pub fn to_json(&self) -> String {
        let file = ModelFileRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(ModelError::Corrupt("not a retypelab model file".into()));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Corrupt("missing version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(ModelError::Version {
                found: version as u32,
                expected: MODEL_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let m = file.model;
        if m.vocabulary.len() != m.fingerprint.size || m.classes.len() != m.scheme.n_classes() {
            return Err(ModelError::Corrupt("inconsistent vocabulary or class list".into()));
        }
        Ok(m)
    }
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct ModelFile {
    #[allow(dead_code)]
    format: String,
    #[allow(dead_code)]
    version: u32,
    model: TrainedModel,
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, model.to_json()).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TrainedModel::from_json(&text)
}
