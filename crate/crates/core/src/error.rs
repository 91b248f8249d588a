use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label `{0}`")]
pub struct LabelError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListingError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: duplicate function `{name}`")]
    DuplicateFunction { line: usize, name: String },
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Listing(#[from] ListingError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("scheme mismatch: {0} vs {1}")]
    SchemeMismatch(String, String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("row {row}, column {column}: cell value `{value}` is not 0 or 1")]
    Cell { row: usize, column: usize, value: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },
    #[error("column {0} out of range")]
    Column(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameter `{key}`: {message}")]
    Hyperparameter { key: String, message: String },
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("vector length {got} does not match vocabulary size {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("vocabulary fingerprint mismatch: model {model}, dataset {dataset}")]
    Fingerprint { model: String, dataset: String },
    #[error("feature importances are not defined for `{0}`")]
    Unsupported(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupted model file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("class `{class}` has {count} rows, fewer than {k} folds")]
    ClassTooSmall { class: String, count: usize, k: usize },
    #[error("no selection method given")]
    NoMethods,
    #[error("every selection method produced an empty feature set")]
    AllEmpty,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid has {size} points, more than the cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} truths")]
    Length(usize, usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("min_support must be positive")]
    ZeroSupport,
    #[error("{0}")]
    Invalid(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("rule card line {line}: {message}")]
    Parse { line: usize, message: String },
}
