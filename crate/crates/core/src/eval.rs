//! Metrics, repeated evaluation with t-based confidence intervals, the three
//! evaluation protocols and CoV-driven convergence loops.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classifiers::{train, ModelSpec};
use crate::dataset::{build_dataset, merge_datasets, Dataset, FeatureConfig};
use crate::error::EvalError;
use crate::label::Scheme;
use crate::seed::{self, stream};
use crate::selection::stratified_split;
use crate::synth::{synthesize_corpus, SynthConfig};

pub const REPETITIONS: usize = 30;
pub const TEST_FRACTION: f64 = 0.2;
pub const COV_WINDOW: usize = 10;
/// Stopping threshold when growing the synthetic corpus.
pub const SIZE_COV_THRESHOLD: f64 = 0.02;
/// Stopping threshold when growing the share of real functions.
pub const REAL_COV_THRESHOLD: f64 = 0.01;
/// Share of real functions held out before the real-fraction loop starts.
pub const REAL_HOLDOUT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    /// Means over the classes present in the truths or the predictions.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_confusion(class_names: &[&str], confusion: Vec<Vec<usize>>) -> Result<Metrics, EvalError> {
        let c = class_names.len();
        if confusion.len() != c || confusion.iter().any(|r| r.len() != c) {
            return Err(EvalError::Invalid(format!("confusion matrix must be {c}x{c}")));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(EvalError::Empty);
        }
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let predicted: Vec<usize> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
        let diag: Vec<usize> = (0..c).map(|i| confusion[i][i]).collect();
        let precision: Vec<f64> = (0..c).map(|i| ratio(diag[i], predicted[i])).collect();
        let recall: Vec<f64> = (0..c).map(|i| ratio(diag[i], support[i])).collect();
        let f1: Vec<f64> = (0..c)
            .map(|i| {
                let (p, r) = (precision[i], recall[i]);
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            })
            .collect();
        let present: Vec<usize> = (0..c).filter(|&i| support[i] > 0 || predicted[i] > 0).collect();
        let avg = |v: &[f64]| present.iter().map(|&i| v[i]).sum::<f64>() / present.len() as f64;
        Ok(Metrics {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            accuracy: ratio(diag.iter().sum(), total),
            macro_precision: avg(&precision),
            macro_recall: avg(&recall),
            macro_f1: avg(&f1),
            precision,
            recall,
            f1,
            support,
            confusion,
        })
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Share of the rows of classes `a` and `b` predicted as the other one.
    pub fn pairwise_misclassification(&self, a: usize, b: usize) -> f64 {
        ratio(
            self.confusion[a][b] + self.confusion[b][a],
            self.support[a] + self.support[b],
        )
    }

    /// Share of the rows of `group` predicted as a different class of the
    /// same group.
    pub fn group_cross_error(&self, group: &[usize]) -> f64 {
        let mut wrong = 0;
        for &i in group {
            for &j in group {
                if i != j {
                    wrong += self.confusion[i][j];
                }
            }
        }
        ratio(wrong, group.iter().map(|&i| self.support[i]).sum())
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("actual\\predicted");
        for n in &self.class_names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for i in 0..self.class_names.len() {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                self.class_names[i], self.precision[i], self.recall[i], self.f1[i], self.support[i]
            );
        }
        out
    }
}

pub fn compute_metrics(pred: &[usize], truth: &[usize], class_names: &[&str]) -> Result<Metrics, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Length(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = class_names.len();
    let mut confusion = vec![vec![0; c]; c];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= c || t >= c {
            return Err(EvalError::Invalid(format!("class index out of range: {p} / {t}")));
        }
        confusion[t][p] += 1;
    }
    Metrics::from_confusion(class_names, confusion)
}

/// One statistic over repetitions, with a Student-t 95% interval.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatedEval {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    pub ci95: (f64, f64),
}

impl RepeatedEval {
    pub fn from_values(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = if values.len() > 1 {
            let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t").inverse_cdf(0.975);
            t * sd / n.sqrt()
        } else {
            0.0
        };
        Ok(RepeatedEval {
            values,
            mean,
            sd,
            ci95: (mean - half, mean + half),
        })
    }

    pub fn half_width(&self) -> f64 {
        (self.ci95.1 - self.ci95.0) / 2.0
    }

    pub fn to_csv(&self, column: &str) -> String {
        let mut out = format!("repetition,{column}\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{v:.6}", i + 1);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    ABetter,
    BBetter,
    NotSignificant,
}

/// Disjoint 95% intervals decide; overlapping ones do not.
pub fn compare_models(a: &RepeatedEval, b: &RepeatedEval) -> Comparison {
    if a.ci95.0 > b.ci95.1 {
        Comparison::ABetter
    } else if b.ci95.0 > a.ci95.1 {
        Comparison::BBetter
    } else {
        Comparison::NotSignificant
    }
}

/// Repeated metrics plus the confusion pooled over all repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub accuracy: RepeatedEval,
    pub macro_precision: RepeatedEval,
    pub macro_recall: RepeatedEval,
    pub macro_f1: RepeatedEval,
    pub pooled: Metrics,
    pub runs: Vec<Metrics>,
}

impl MetricSummary {
    pub fn from_runs(runs: Vec<Metrics>) -> Result<Self, EvalError> {
        let first = runs.first().ok_or(EvalError::Empty)?;
        let c = first.class_names.len();
        let mut conf = vec![vec![0; c]; c];
        for m in &runs {
            for (i, row) in m.confusion.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    conf[i][j] += v;
                }
            }
        }
        let names: Vec<&str> = first.class_names.iter().map(String::as_str).collect();
        let pooled = Metrics::from_confusion(&names, conf)?;
        let col = |f: fn(&Metrics) -> f64| RepeatedEval::from_values(runs.iter().map(f).collect());
        Ok(MetricSummary {
            accuracy: col(|m| m.accuracy)?,
            macro_precision: col(|m| m.macro_precision)?,
            macro_recall: col(|m| m.macro_recall)?,
            macro_f1: col(|m| m.macro_f1)?,
            pooled,
            runs,
        })
    }

    pub const TABLE_HEADER: &'static str =
        "model,accuracy,accuracy_ci,precision,precision_ci,recall,recall_ci,f1,f1_ci";

    /// One row shaped like the published result tables (CI as ± percent).
    pub fn table_row(&self, model: &str) -> String {
        let cell = |r: &RepeatedEval| format!("{:.3},{:.2}%", r.mean, 100.0 * r.half_width());
        format!(
            "{model},{},{},{},{}",
            cell(&self.accuracy),
            cell(&self.macro_precision),
            cell(&self.macro_recall),
            cell(&self.macro_f1)
        )
    }
}

fn rep_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

fn train_and_score(
    spec: &ModelSpec,
    d: &Dataset,
    train_rows: &[usize],
    test_rows: &[usize],
) -> Result<Metrics, EvalError> {
    let model = train(spec, &d.subset(train_rows))?;
    let test = d.subset(test_rows);
    let pred = model.predict_dataset(&test)?;
    compute_metrics(&pred, &test.labels(), d.scheme.class_names())
}

fn merged(real: Option<&Dataset>, synth: &Dataset) -> Result<Dataset, EvalError> {
    Ok(match real {
        Some(r) => merge_datasets(r, synth)?,
        None => synth.clone(),
    })
}

/// Real and synthetic rows mixed, `reps` stratified 80/20 shuffles.
pub fn evaluate_method1(
    real: Option<&Dataset>,
    synth: &Dataset,
    spec: &ModelSpec,
    reps: usize,
    seed: u64,
) -> Result<MetricSummary, EvalError> {
    let d = merged(real, synth)?;
    let runs: Vec<Metrics> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let s = rep_seed(seed, i);
            let (tr, te) = stratified_split(&d, TEST_FRACTION, s)?;
            let spec = ModelSpec {
                rng_seed: s,
                ..spec.clone()
            };
            train_and_score(&spec, &d, &tr, &te)
        })
        .collect::<Result<_, _>>()?;
    MetricSummary::from_runs(runs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTrace {
    pub xs: Vec<f64>,
    pub accuracies: Vec<f64>,
    /// CoV of the window ending at each point, once a full window exists.
    pub covs: Vec<Option<f64>>,
    pub window: usize,
    pub threshold: f64,
    pub stop_index: Option<usize>,
}

/// Population coefficient of variation.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64, EvalError> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 || !mean.is_finite() {
        return Err(EvalError::Invalid(format!("window mean {mean} is not positive")));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

impl ConvergenceTrace {
    pub fn new(window: usize, threshold: f64) -> Self {
        ConvergenceTrace {
            xs: Vec::new(),
            accuracies: Vec::new(),
            covs: Vec::new(),
            window,
            threshold,
            stop_index: None,
        }
    }

    /// Append a point; returns true once the trace has stopped.
    pub fn push(&mut self, x: f64, acc: f64) -> Result<bool, EvalError> {
        if self.stop_index.is_some() {
            return Ok(true);
        }
        self.xs.push(x);
        self.accuracies.push(acc);
        let n = self.accuracies.len();
        let cov = if n >= self.window {
            Some(coefficient_of_variation(&self.accuracies[n - self.window..])?)
        } else {
            None
        };
        self.covs.push(cov);
        if cov.is_some_and(|c| c < self.threshold) {
            self.stop_index = Some(n - 1);
        }
        Ok(self.stop_index.is_some())
    }

    /// Replay a finished sequence, stopping at the first qualifying point.
    pub fn replay(xs: &[f64], accuracies: &[f64], window: usize, threshold: f64) -> Result<Self, EvalError> {
        if window == 0 {
            return Err(EvalError::Invalid("window must be positive".into()));
        }
        let mut t = ConvergenceTrace::new(window, threshold);
        for (&x, &a) in xs.iter().zip(accuracies) {
            if t.push(x, a)? {
                break;
            }
        }
        Ok(t)
    }

    pub fn converged(&self) -> bool {
        self.stop_index.is_some()
    }

    pub fn stop_x(&self) -> Option<f64> {
        self.stop_index.map(|i| self.xs[i])
    }

    /// The stopping size minus one window of steps.
    pub fn recommended(&self, step: f64) -> Option<f64> {
        self.stop_x().map(|x| x - self.window as f64 * step)
    }

    pub fn to_csv(&self, x_name: &str) -> String {
        let mut out = format!("{x_name},accuracy,cov,stop\n");
        for i in 0..self.xs.len() {
            let cov = self.covs[i].map(|c| format!("{c:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.6},{cov},{}",
                self.xs[i],
                self.accuracies[i],
                self.stop_index == Some(i)
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Method2Result {
    /// x values are percentages of the real training pool.
    pub trace: ConvergenceTrace,
    /// Percent of real functions used at the stop, or 100 when the loop
    /// never converged.
    pub stop_percent: f64,
    pub converged: bool,
    pub at_stop: MetricSummary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Method2Options {
    pub step_percent: usize,
    pub window: usize,
    pub threshold: f64,
    pub reps: usize,
}

impl Default for Method2Options {
    fn default() -> Self {
        Method2Options {
            step_percent: 1,
            window: COV_WINDOW,
            threshold: REAL_COV_THRESHOLD,
            reps: REPETITIONS,
        }
    }
}

/// Train on all synthetic rows plus a growing share of the real ones; test
/// on a real holdout fixed before the loop.
pub fn evaluate_method2(
    real: &Dataset,
    synth: &Dataset,
    spec: &ModelSpec,
    opts: &Method2Options,
    seed: u64,
) -> Result<Method2Result, EvalError> {
    if real.is_empty() {
        return Err(EvalError::Invalid("method 2 needs real functions".into()));
    }
    if opts.step_percent == 0 || opts.step_percent > 100 {
        return Err(EvalError::Invalid("step must lie in 1..=100 percent".into()));
    }
    let d = merge_datasets(real, synth)?;
    let n_real = real.len();
    let synth_rows: Vec<usize> = (n_real..d.len()).collect();
    let (pool, holdout) = stratified_split(real, REAL_HOLDOUT, seed)?;

    let shuffled_pool = |s: u64| {
        let mut p = pool.clone();
        p.shuffle(&mut seed::rng(s, stream::SPLIT, u64::MAX));
        p
    };
    let run_at = |percent: usize, s: u64| -> Result<Metrics, EvalError> {
        let p = shuffled_pool(s);
        let take = (p.len() * percent + 50) / 100;
        let mut tr = synth_rows.clone();
        tr.extend_from_slice(&p[..take]);
        let spec = ModelSpec {
            rng_seed: s,
            ..spec.clone()
        };
        train_and_score(&spec, &d, &tr, &holdout)
    };

    let percents: Vec<usize> = (0..=100).step_by(opts.step_percent).collect();
    let mut trace = ConvergenceTrace::new(opts.window, opts.threshold);
    'outer: for batch in percents.chunks(opts.window.max(1)) {
        let accs: Vec<f64> = batch
            .par_iter()
            .map(|&p| run_at(p, seed).map(|m| m.accuracy))
            .collect::<Result<_, _>>()?;
        for (&p, a) in batch.iter().zip(accs) {
            if trace.push(p as f64, a)? {
                break 'outer;
            }
        }
    }
    let converged = trace.converged();
    let stop_percent = trace.stop_x().unwrap_or(100.0);
    let runs: Vec<Metrics> = (0..opts.reps)
        .into_par_iter()
        .map(|i| run_at(stop_percent as usize, rep_seed(seed, i)))
        .collect::<Result<_, _>>()?;
    Ok(Method2Result {
        trace,
        stop_percent,
        converged,
        at_stop: MetricSummary::from_runs(runs)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgramRun {
    pub program: String,
    pub metrics: Metrics,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Function symbols found on both sides; empty unless programs share
    /// symbol names.
    pub shared_symbols: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Method3Result {
    pub runs: Vec<ProgramRun>,
    pub summary: MetricSummary,
}

/// Leave one program out: each program is tested by a model trained on the
/// others (plus optional synthetic rows).
pub fn evaluate_method3(
    programs: &[(String, Dataset)],
    synth: Option<&Dataset>,
    spec: &ModelSpec,
    seed: u64,
) -> Result<Method3Result, EvalError> {
    if programs.len() < 2 {
        return Err(EvalError::Invalid(format!(
            "leave-one-program-out needs at least two programs, got {}",
            programs.len()
        )));
    }
    let mut d = Dataset::empty(programs[0].1.scheme);
    let mut ranges = Vec::new();
    for (_, p) in programs {
        let start = d.len();
        d = merge_datasets(&d, p)?;
        ranges.push(start..d.len());
    }
    let synth_range = match synth {
        Some(s) => {
            let start = d.len();
            d = merge_datasets(&d, s)?;
            start..d.len()
        }
        None => d.len()..d.len(),
    };
    let runs: Vec<ProgramRun> = (0..programs.len())
        .into_par_iter()
        .map(|held| {
            let test: Vec<usize> = ranges[held].clone().collect();
            let train_rows: Vec<usize> = ranges
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .flat_map(|(_, r)| r.clone())
                .chain(synth_range.clone())
                .collect();
            let train_syms: BTreeSet<&str> = train_rows.iter().map(|&i| d.rows[i].function.as_str()).collect();
            let shared_symbols = test
                .iter()
                .map(|&i| d.rows[i].function.as_str())
                .filter(|s| train_syms.contains(s))
                .map(str::to_string)
                .collect();
            let spec = ModelSpec {
                rng_seed: rep_seed(seed, held),
                ..spec.clone()
            };
            Ok(ProgramRun {
                program: programs[held].0.clone(),
                metrics: train_and_score(&spec, &d, &train_rows, &test)?,
                train_rows: train_rows.len(),
                test_rows: test.len(),
                shared_symbols,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let summary = MetricSummary::from_runs(runs.iter().map(|r| r.metrics.clone()).collect())?;
    Ok(Method3Result { runs, summary })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeOptions {
    /// Total functions at the first point.
    pub start: usize,
    pub step: usize,
    pub window: usize,
    pub threshold: f64,
    pub max_points: usize,
}

impl Default for SizeOptions {
    fn default() -> Self {
        SizeOptions {
            start: 1000,
            step: 1000,
            window: COV_WINDOW,
            threshold: SIZE_COV_THRESHOLD,
            max_points: 60,
        }
    }
}

/// Grow a synthetic corpus until the accuracy CoV over the trailing window
/// drops below the threshold. Each point rebuilds the corpus with an equal
/// share per type and scores one stratified 80/20 split.
pub fn converge_dataset_size(
    base: &SynthConfig,
    features: &FeatureConfig,
    spec: &ModelSpec,
    opts: &SizeOptions,
    seed: u64,
) -> Result<ConvergenceTrace, EvalError> {
    if opts.step == 0 {
        return Err(EvalError::Invalid("step must be at least 1".into()));
    }
    let n_types = base.counts.len();
    let mut trace = ConvergenceTrace::new(opts.window, opts.threshold);
    for i in 0..opts.max_points {
        let total = opts.start + i * opts.step;
        let cfg = SynthConfig {
            counts: [(total / n_types).max(2); 10],
            ..base.clone()
        };
        let functions = synthesize_corpus(&cfg)?;
        let (d, _) = build_dataset(&functions, features, Scheme::HighLevel);
        let (tr, te) = stratified_split(&d, TEST_FRACTION, seed)?;
        let acc = train_and_score(spec, &d, &tr, &te)?.accuracy;
        if trace.push(total as f64, acc)? {
            break;
        }
    }
    Ok(trace)
}

/// Published decompiler results kept for report context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub name: &'static str,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

const fn b(name: &'static str, accuracy: f64, precision: f64, recall: f64, f1: f64) -> Baseline {
    Baseline {
        name,
        accuracy,
        precision,
        recall,
        f1,
    }
}

const SIZE_REP_BASELINES: [Baseline; 4] = [
    b("IDA decompiler", 0.583, 0.495, 0.413, 0.415),
    b("RetDec", 0.290, 0.111, 0.133, 0.110),
    b("Snowman", 0.544, 0.365, 0.328, 0.322),
    b("Hopper", 0.333, 0.132, 0.132, 0.079),
];

const HIGH_LEVEL_BASELINES: [Baseline; 4] = [
    b("IDA decompiler", 0.40, 0.33, 0.34, 0.30),
    b("RetDec", 0.15, 0.06, 0.10, 0.06),
    b("Snowman", 0.29, 0.22, 0.26, 0.21),
    b("Hopper", 0.14, 0.08, 0.09, 0.03),
];

pub fn decompiler_baselines(scheme: Scheme) -> &'static [Baseline] {
    match scheme {
        Scheme::HighLevel => &HIGH_LEVEL_BASELINES,
        Scheme::SizeRep => &SIZE_REP_BASELINES,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_identities() {
        let names = ["a", "b", "c"];
        let m = compute_metrics(&[0, 1, 1, 2, 0, 2], &[0, 1, 2, 2, 1, 2], &names).unwrap();
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 2]]);
        let trace: usize = (0..3).map(|i| m.confusion[i][i]).sum();
        assert_eq!(m.accuracy, trace as f64 / 6.0);
        assert_eq!(m.macro_f1, m.f1.iter().sum::<f64>() / 3.0);
        for i in 0..3 {
            assert!((m.recall[i] * m.support[i] as f64 - m.confusion[i][i] as f64).abs() < 1e-12);
        }
        assert!(matches!(compute_metrics(&[], &[], &names), Err(EvalError::Empty)));
        assert!(matches!(
            compute_metrics(&[0], &[0, 1], &names),
            Err(EvalError::Length(1, 2))
        ));
    }

    #[test]
    fn zero_denominators() {
        let m = compute_metrics(&[0, 0], &[0, 1], &["a", "b", "c"]).unwrap();
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.f1[1], 0.0);
        // Class c never occurs and is left out of the macro means.
        assert_eq!(m.macro_recall, 0.5);
    }

    #[test]
    fn ci_matches_t_quantile() {
        let v: Vec<f64> = (0..30).map(|i| 0.8 + 0.001 * i as f64).collect();
        let r = RepeatedEval::from_values(v.clone()).unwrap();
        let mean = v.iter().sum::<f64>() / 30.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 29.0).sqrt();
        // t(0.975, 29) from standard tables.
        let half = 2.045_229_642_132_703 * sd / 30f64.sqrt();
        assert!((r.ci95.0 - (mean - half)).abs() < 1e-9);
        assert!((r.ci95.1 - (mean + half)).abs() < 1e-9);
        assert!(r.ci95.0 <= r.mean && r.mean <= r.ci95.1);
    }

    fn fixed_ci(lo: f64, hi: f64) -> RepeatedEval {
        RepeatedEval {
            values: vec![],
            mean: (lo + hi) / 2.0,
            sd: 0.0,
            ci95: (lo, hi),
        }
    }

    #[test]
    fn comparisons() {
        assert_eq!(
            compare_models(&fixed_ci(0.80, 0.82), &fixed_ci(0.70, 0.72)),
            Comparison::ABetter
        );
        assert_eq!(
            compare_models(&fixed_ci(0.70, 0.72), &fixed_ci(0.80, 0.82)),
            Comparison::BBetter
        );
        assert_eq!(
            compare_models(&fixed_ci(0.80, 0.84), &fixed_ci(0.83, 0.86)),
            Comparison::NotSignificant
        );
        let a = fixed_ci(0.5, 0.6);
        assert_eq!(compare_models(&a, &a), Comparison::NotSignificant);
    }

    #[test]
    fn cov_stops_at_first_qualifying_window() {
        let xs: Vec<f64> = (0..15).map(f64::from).collect();
        let t = ConvergenceTrace::replay(&xs, &[0.8; 15], 10, 0.02).unwrap();
        assert_eq!(t.stop_index, Some(9));
        assert!(t.covs[9].unwrap() < 1e-12);
        assert!(t.covs[8].is_none());
        let osc: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.5 } else { 0.9 }).collect();
        let xs: Vec<f64> = (0..40).map(f64::from).collect();
        let t = ConvergenceTrace::replay(&xs, &osc, 10, 0.02).unwrap();
        assert!(!t.converged());
        assert!(ConvergenceTrace::replay(&xs, &[0.0; 40], 10, 0.02).is_err());
    }
}
