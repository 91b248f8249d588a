//! Pipeline configuration: a TOML file whose every field has a default, so
//! an empty file (or none) is valid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use retypelab::classifiers::{Algorithm, ModelSpec};
use retypelab::dataset::FeatureConfig;
use retypelab::rules::MineParams;
use retypelab::selection::SelectionMethod;
use retypelab::synth::SynthConfig;
use retypelab::Scheme;

use crate::invalid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scheme: String,
    pub paths: Paths,
    /// `SynthConfig` keys (`count`, `count.<type>`, `confusable_mode`, ...).
    pub synth: BTreeMap<String, toml::Value>,
    pub features: Features,
    pub model: Model,
    pub selection: Selection,
    pub eval: Eval,
    pub mine: Mine,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            scheme: "high_level".into(),
            paths: Paths::default(),
            synth: BTreeMap::new(),
            features: Features::default(),
            model: Model::default(),
            selection: Selection::default(),
            eval: Eval::default(),
            mine: Mine::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub selection: PathBuf,
    pub rules: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "out/corpus.asm".into(),
            dataset: "out/dataset.csv".into(),
            model: "out/model.json".into(),
            selection: "out/selection.txt".into(),
            rules: "out/rules.txt".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub ret: bool,
    pub post: bool,
    pub advanced: bool,
    pub max_len: usize,
    pub budget: usize,
    pub min_support_rows: usize,
}

impl Default for Features {
    fn default() -> Self {
        let d = FeatureConfig::default();
        Features {
            ret: d.ret,
            post: d.post,
            advanced: d.advanced,
            max_len: d.max_len,
            budget: d.budget,
            min_support_rows: d.min_support_rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model {
    pub algorithm: String,
    pub select: bool,
    pub tune: bool,
    /// `key=v1|v2;key2=v3`; empty means the algorithm's default grid.
    pub grid: String,
    pub hyperparameters: BTreeMap<String, String>,
}

impl Default for Model {
    fn default() -> Self {
        Model {
            algorithm: Algorithm::DecisionTree.name().into(),
            select: false,
            tune: false,
            grid: String::new(),
            hyperparameters: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selection {
    pub methods: Vec<String>,
}

impl Default for Selection {
    fn default() -> Self {
        Selection {
            methods: SelectionMethod::default_menu().iter().map(|m| m.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub method: u8,
    pub repetitions: usize,
    /// Dataset of real functions for methods 1 and 2.
    pub real: Option<PathBuf>,
    /// One dataset per program for method 3.
    pub programs: Vec<PathBuf>,
}

impl Default for Eval {
    fn default() -> Self {
        Eval {
            method: 1,
            repetitions: retypelab::eval::REPETITIONS,
            real: None,
            programs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mine {
    pub min_support: f64,
    pub max_antecedents: usize,
    pub min_confidence: f64,
    /// Files of selected feature names, one per line.
    pub selections: Vec<PathBuf>,
}

impl Default for Mine {
    fn default() -> Self {
        let d = MineParams::default();
        Mine {
            min_support: d.min_support,
            max_antecedents: d.max_antecedents,
            min_confidence: d.min_confidence,
            selections: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scheme(&self) -> Result<Scheme> {
        self.scheme.parse().map_err(|e| invalid(format!("scheme: {e}")))
    }

    pub fn feature_config(&self) -> FeatureConfig {
        let f = &self.features;
        FeatureConfig {
            ret: f.ret,
            post: f.post,
            advanced: f.advanced,
            max_len: f.max_len,
            budget: f.budget,
            min_support_rows: f.min_support_rows,
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let mut cfg = SynthConfig {
            rng_seed: self.seed,
            ..SynthConfig::default()
        };
        for (k, v) in &self.synth {
            let text = match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Array(items) => items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            cfg.set(k, &text).map_err(|e| invalid(e.to_string()))?;
        }
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let algorithm: Algorithm = self.model.algorithm.parse().map_err(|e| invalid(format!("{e}")))?;
        let spec = ModelSpec {
            algorithm,
            hyperparameters: self.model.hyperparameters.clone(),
            rng_seed: self.seed,
        };
        spec.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn selection_methods(&self) -> Result<Vec<SelectionMethod>> {
        self.selection
            .methods
            .iter()
            .map(|m| m.parse().map_err(|e| invalid(format!("selection method `{m}`: {e}"))))
            .collect()
    }

    pub fn mine_params(&self) -> MineParams {
        MineParams {
            min_support: self.mine.min_support,
            max_antecedents: self.mine.max_antecedents,
            min_confidence: self.mine.min_confidence,
        }
    }
}
