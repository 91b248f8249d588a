use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use retypelab::error::{DatasetError, EvalError, ListingError, ModelError, RuleError, SelectionError, SynthError};

mod commands;
mod config;

/// Input or configuration problem; exits with [`EXIT_VALIDATION`].
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "retypelab",
    version,
    about = "Infer function return types from 32-bit x86 disassembly"
)]
pub struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, env = "RETYPELAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Leave the generation timestamp out of reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Overrides `paths.reports`.
    #[arg(long, global = true)]
    pub report_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Turn labeled listings into a dataset CSV.
    Build(BuildArgs),
    /// Run the feature-selection menu.
    Select(SelectArgs),
    /// Grid-search hyperparameters.
    Tune(TuneArgs),
    /// Fit a model and save it.
    Train(TrainArgs),
    /// Evaluate with method 1, 2 or 3.
    Eval(EvalArgs),
    /// Mine association rules into rule cards.
    Mine(MineArgs),
    /// Predict return types for an unlabeled listing.
    Predict(PredictArgs),
    /// Summarize a dataset (and model) next to decompiler baselines.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Functions per type.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub confusable: bool,
    /// Pick the corpus size by growing it until accuracy settles.
    #[arg(long)]
    pub converge: bool,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Listing files; defaults to the configured corpus.
    pub listings: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub ret_only: bool,
    #[arg(long)]
    pub no_advanced: bool,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Dataset CSV; defaults to `paths.dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// e.g. `decision_tree`, `random_forest`, `bernoulli_nb`.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Hyperparameter override, `key=value`.
    #[arg(long = "param")]
    pub params: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Selection method, e.g. `sfm_random_forest_mean` or `rfe_0.1`.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    /// Where the winning feature names go.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `key=v1|v2;key2=v3`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub select: bool,
    #[arg(long)]
    pub tune: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// 1: mixed shuffles, 2: growing real fraction, 3: leave one program out.
    #[arg(long)]
    pub method: Option<u8>,
    /// Dataset of real functions (methods 1 and 2).
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Per-program dataset (method 3); repeat for each program.
    #[arg(long = "program")]
    pub programs: Vec<PathBuf>,
    /// Method 3: also train on the synthetic dataset.
    #[arg(long)]
    pub with_synthetic: bool,
    /// Repetitions (method 1) or repeats per point (method 2).
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Selected-feature files; their intersection restricts the columns.
    #[arg(long = "selection")]
    pub selections: Vec<PathBuf>,
    #[arg(long)]
    pub min_support: Option<f64>,
    #[arg(long)]
    pub max_antecedents: Option<usize>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    pub listing: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Exit code for an error: validation problems anywhere in the chain win.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let validation = cause.is::<Invalid>()
            || cause.is::<ListingError>()
            || cause.is::<RuleError>()
            || matches!(
                cause.downcast_ref::<SynthError>(),
                Some(SynthError::Config(_) | SynthError::Listing(_))
            )
            || matches!(
                cause.downcast_ref::<ModelError>(),
                Some(
                    ModelError::Hyperparameter { .. }
                        | ModelError::UnknownAlgorithm(_)
                        | ModelError::Dimension { .. }
                        | ModelError::Fingerprint { .. }
                        | ModelError::Version { .. }
                        | ModelError::Corrupt(_)
                )
            )
            || matches!(
                cause.downcast_ref::<DatasetError>(),
                Some(
                    DatasetError::SchemeMismatch(..)
                        | DatasetError::Header(_)
                        | DatasetError::Cell { .. }
                        | DatasetError::Row { .. }
                        | DatasetError::UnknownLabel { .. }
                        | DatasetError::Column(_)
                        | DatasetError::Csv(_)
                )
            )
            || matches!(cause.downcast_ref::<EvalError>(), Some(EvalError::Invalid(_)))
            || matches!(
                cause.downcast_ref::<SelectionError>(),
                Some(
                    SelectionError::ClassTooSmall { .. }
                        | SelectionError::NoMethods
                        | SelectionError::EmptyGrid
                        | SelectionError::GridTooLarge { .. }
                )
            );
        if validation {
            return EXIT_VALIDATION;
        }
    }
    EXIT_RUNTIME
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    commands::dispatch(cli)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
