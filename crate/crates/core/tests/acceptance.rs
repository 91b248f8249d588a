//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use retypelab::asm::{parse_listing, ParseOptions};
use retypelab::bits::BitRow;
use retypelab::classifiers::linear::logistic_objective;
use retypelab::classifiers::{train, Algorithm, ModelSpec};
use retypelab::dataset::{build_dataset, Dataset, FeatureConfig};
use retypelab::eval::{evaluate_method1, evaluate_method3, ConvergenceTrace, Metrics};
use retypelab::rules::{mine_rules, render_rule_cards, verify_rule, MineParams};
use retypelab::synth::{emit_listing, synthesize_corpus, SynthConfig};
use retypelab::{seed, Scheme};

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus_dataset(cfg: &SynthConfig, features: &FeatureConfig) -> Dataset {
    let functions = synthesize_corpus(cfg).expect("corpus");
    build_dataset(&functions, features, Scheme::HighLevel).0
}

fn c1_golden() -> Check {
    let pairs = golden_pairs();
    ensure(pairs.len() == 20, || format!("fixture holds {} pairs", pairs.len()))?;
    for p in &pairs {
        check_golden(p)?;
    }
    Ok(format!("{} pairs reproduced", pairs.len()))
}

fn c2_confusion_fixture() -> Check {
    let m = reference_confusion();
    let bool_i = m.class_index("bool").unwrap();
    let char_i = m.class_index("char").unwrap();
    let group: Vec<usize> = ["int", "pointer", "struct"]
        .iter()
        .map(|n| m.class_index(n).unwrap())
        .collect();
    let got = [
        sig3(m.recall[bool_i]),
        sig3(m.pairwise_misclassification(bool_i, char_i)),
        sig3(m.group_cross_error(&group)),
    ];
    ensure(got == ["0.805", "0.288", "0.229"], || format!("got {got:?}"))?;
    Ok(format!(
        "bool recall {}, bool<->char {}, int/pointer/struct {}",
        got[0], got[1], got[2]
    ))
}

fn c3_cov_replay() -> Check {
    let xs: Vec<f64> = (0..60).map(|k| 1000.0 * (k + 1) as f64).collect();
    let accs: Vec<f64> = (0..60).map(|k| (0.375 + 0.025 * k as f64).min(0.80)).collect();
    let trace = ConvergenceTrace::replay(&xs, &accs, 10, 0.02).map_err(|e| e.to_string())?;
    let stop = trace.stop_x();
    let rec = trace.recommended(1000.0);
    ensure(stop == Some(26000.0) && rec == Some(16000.0), || {
        format!("stop {stop:?}, recommended {rec:?}")
    })?;
    Ok("stop at 26000, recommended 16000".into())
}

fn c4_oracles() -> Check {
    // (a) naive Bayes against the enumerated joint distribution.
    let mut worst: f64 = 0.0;
    for s in 0..40u64 {
        let f = 1 + (s as usize % 5);
        let d = random_dataset(s, 30, f, 2 + (s as usize % 4), 0.4);
        let alpha = [1.0, 0.5, 0.01][s as usize % 3];
        let spec = ModelSpec::new(Algorithm::BernoulliNb).with("alpha", alpha);
        let m = train(&spec, &d).map_err(|e| e.to_string())?;
        for v in 0..1usize << f {
            let q: Vec<bool> = (0..f).map(|j| v >> j & 1 == 1).collect();
            let got = m
                .predict_proba(&BitRow::from_bools(&q))
                .map_err(|e| e.to_string())?
                .unwrap();
            let want = nb_posterior_by_enumeration(&d, alpha, &q);
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst < 1e-9, || format!("naive Bayes off by {worst:e}"))?;

    // (b) Apriori against every antecedent subset.
    let mut checked = 0;
    for s in 0..30u64 {
        let f = 4 + (s as usize % 9);
        let n = 16 + (s as usize * 7) % 49;
        let d = random_dataset(1000 + s, n, f, 3, 0.5);
        for (min_support, max_antecedents, min_confidence) in [(0.05, 2, 1.0), (0.02, 3, 0.6), (0.1, f, 0.0)] {
            let p = MineParams {
                min_support,
                max_antecedents,
                min_confidence,
            };
            let got: BTreeSet<(Vec<usize>, usize, usize)> = mine_rules(&d, &p)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|r| (r.columns, r.class, r.covered_count))
                .collect();
            let want = exhaustive_rules(&d, min_support, max_antecedents, min_confidence);
            ensure(got == want, || {
                format!("seed {s} {p:?}: {} mined vs {} enumerated", got.len(), want.len())
            })?;
            checked += 1;
        }
    }

    // (c) a single unbagged all-feature forest is the decision tree.
    for s in 0..10u64 {
        let d = random_dataset(2000 + s, 120, 10, 4, 0.3);
        let dt = train(&ModelSpec::new(Algorithm::DecisionTree), &d).map_err(|e| e.to_string())?;
        let rf_spec = ModelSpec::new(Algorithm::RandomForest)
            .with("n_trees", 1)
            .with("bootstrap", false)
            .with("max_features", "all")
            .with("max_depth", "inf")
            .seeded(s);
        let rf = train(&rf_spec, &d).map_err(|e| e.to_string())?;
        let probe = random_dataset(3000 + s, 200, 10, 4, 0.3);
        let a = dt.predict_dataset(&probe).map_err(|e| e.to_string())?;
        let b = rf.predict_dataset(&probe).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {s}: forest and tree disagree"))?;
    }
    Ok(format!(
        "NB max |delta| {worst:.1e}; {checked} Apriori configurations equal; forest == tree"
    ))
}

fn c5_numerics() -> Check {
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let mut rng = seed::rng_from(s);
        let f = rng.gen_range(1..8);
        let c = rng.gen_range(2..5);
        let d = random_dataset(4000 + s, rng.gen_range(5..40), f, c, 0.5);
        let x: Vec<BitRow> = d.rows.iter().map(|r| r.bits.clone()).collect();
        let y = d.labels();
        let l2 = [0.0, 1e-4, 0.1][s as usize % 3];
        let params: Vec<f64> = (0..f * c + c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = logistic_objective(&params, &x, &y, c, l2);
        let fd = finite_difference(|p| logistic_objective(p, &x, &y, c, l2).0, &params, 1e-5);
        worst = worst.max(relative_error(&grad, &fd));
    }
    ensure(worst < 1e-5, || format!("gradient relative error {worst:e}"))?;

    let d = random_dataset(5000, 200, 12, 10, 0.3);
    let probe = random_dataset(5001, 100, 12, 10, 0.3);
    let nb = train(&ModelSpec::new(Algorithm::BernoulliNb), &d).map_err(|e| e.to_string())?;
    let mut sum_err: f64 = 0.0;
    for r in &probe.rows {
        let p = nb.predict_proba(&r.bits).map_err(|e| e.to_string())?.unwrap();
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(sum_err < 1e-9, || format!("NB probabilities sum off by {sum_err:e}"))?;

    let mut imp_err: f64 = 0.0;
    for a in [
        Algorithm::DecisionTree,
        Algorithm::RandomForest,
        Algorithm::ExtraTrees,
        Algorithm::GradientBoosting,
    ] {
        let spec = small_ensemble(ModelSpec::new(a));
        let m = train(&spec, &d).map_err(|e| e.to_string())?;
        let imp = m.feature_importances().map_err(|e| e.to_string())?;
        imp_err = imp_err.max((imp.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(imp_err < 1e-9, || format!("importances sum off by {imp_err:e}"))?;
    Ok(format!(
        "gradient rel err {worst:.1e}; |sum p - 1| {sum_err:.1e}; |sum imp - 1| {imp_err:.1e}"
    ))
}

fn small_ensemble(spec: ModelSpec) -> ModelSpec {
    match spec.algorithm {
        Algorithm::RandomForest | Algorithm::ExtraTrees => spec.with("n_trees", 20),
        Algorithm::GradientBoosting => spec.with("rounds", 10),
        _ => spec,
    }
}

fn c6_separable() -> Check {
    let d = corpus_dataset(&SynthConfig::uniform(300, 6), &FeatureConfig::default());
    ensure(d.len() == 3000, || format!("{} rows", d.len()))?;
    let s = evaluate_method1(None, &d, &ModelSpec::new(Algorithm::DecisionTree), 30, 6).map_err(|e| e.to_string())?;
    ensure(s.accuracy.mean >= 0.95, || {
        format!("mean accuracy {:.4}", s.accuracy.mean)
    })?;
    Ok(format!(
        "mean accuracy {:.4} over {} repetitions",
        s.accuracy.mean,
        s.accuracy.values.len()
    ))
}

fn pooled(d: &Dataset, reps: usize, seed: u64) -> Result<Metrics, String> {
    let s =
        evaluate_method1(None, d, &ModelSpec::new(Algorithm::DecisionTree), reps, seed).map_err(|e| e.to_string())?;
    Ok(s.pooled)
}

fn c7_confusable() -> Check {
    let cfg = SynthConfig {
        confusable_mode: true,
        ..SynthConfig::uniform(100, 7)
    };
    let functions = synthesize_corpus(&cfg).map_err(|e| e.to_string())?;
    let (ret_only, _) = build_dataset(&functions, &FeatureConfig::ret_only(), Scheme::HighLevel);
    let (full, _) = build_dataset(&functions, &FeatureConfig::default(), Scheme::HighLevel);
    let a = pooled(&ret_only, 10, 7)?;
    let b = pooled(&full, 10, 7)?;
    let (bi, ci) = (a.class_index("bool").unwrap(), a.class_index("char").unwrap());
    let before = a.pairwise_misclassification(bi, ci);
    let after = b.pairwise_misclassification(bi, ci);
    let (f1_before, f1_after) = (a.f1[ci], b.f1[ci]);
    let detail = format!(
        "bool<->char {:.3} -> {:.3}; char F1 {:.3} -> {:.3}",
        before, after, f1_before, f1_after
    );
    ensure(before > 0.20, || format!("RET-only confusion too low: {detail}"))?;
    ensure(after <= 0.7 * before, || format!("confusion not reduced 30%: {detail}"))?;
    ensure(f1_after >= 1.1 * f1_before, || {
        format!("char F1 not raised 10%: {detail}")
    })?;
    Ok(detail)
}

const PLANTED: [(&str, &str); 4] = [
    ("POST: caller_epilogue | cwde", "short"),
    ("POST: #fp_fstp=dword", "float"),
    ("POST: #fp_fstp=qword", "double"),
    ("RET: #lea_eax", "pointer"),
];

fn c8_planted() -> Check {
    let d = corpus_dataset(&SynthConfig::uniform(100, 8), &FeatureConfig::default());
    // Each marker must be exclusive to its type in the corpus itself.
    for (feature, class) in PLANTED {
        let j = d
            .vocabulary
            .get(feature)
            .ok_or(format!("`{feature}` not in vocabulary"))?;
        let want = d.scheme.class_index(class).unwrap();
        let classes: BTreeSet<usize> = d.rows.iter().filter(|r| r.bits.get(j)).map(|r| r.class).collect();
        ensure(classes == BTreeSet::from([want]), || {
            format!("`{feature}` occurs in classes {classes:?}")
        })?;
    }
    let rules = mine_rules(&d, &MineParams::default()).map_err(|e| e.to_string())?;
    for (feature, class) in PLANTED {
        let r = rules
            .iter()
            .find(|r| r.antecedents == [feature] && r.consequent == class)
            .ok_or(format!("rule {feature} -> {class} not mined"))?;
        ensure(r.confidence == 1.0 && r.support > 0.0, || r.body())?;
        let v = verify_rule(r, &d).map_err(|e| e.to_string())?;
        ensure(v.holds && v.counterexample.is_none() && !v.zero_support, || {
            format!("{v:?}")
        })?;
    }
    Ok(format!("4 planted rules recovered among {}", rules.len()))
}

/// Synthesize, round-trip through the listing text, build, train and mine.
fn pipeline_artifacts(seed: u64) -> Result<[String; 4], String> {
    let functions = synthesize_corpus(&SynthConfig::uniform(20, seed)).map_err(|e| e.to_string())?;
    let listing = emit_listing(&functions);
    let parsed = parse_listing(&listing, ParseOptions::default()).map_err(|e| e.to_string())?;
    let (d, _) = build_dataset(&parsed, &FeatureConfig::default(), Scheme::HighLevel);
    let spec = ModelSpec::new(Algorithm::RandomForest).with("n_trees", 15).seeded(seed);
    let model = train(&spec, &d).map_err(|e| e.to_string())?;
    let rules = mine_rules(&d, &MineParams::default()).map_err(|e| e.to_string())?;
    let cards = render_rule_cards(&rules, &format!("seed: {seed}"));
    Ok([listing, d.to_csv_string(), model.to_json(), cards])
}

fn c9_determinism() -> Check {
    let a = pipeline_artifacts(9)?;
    let b = pipeline_artifacts(9)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let c = pool.install(|| pipeline_artifacts(9))?;
    for (i, what) in ["corpus", "dataset CSV", "model file", "rule cards"].iter().enumerate() {
        ensure(a[i] == b[i] && a[i] == c[i], || format!("{what} differs between runs"))?;
    }
    let other = pipeline_artifacts(10)?;
    ensure(other[1] != a[1], || "seed has no effect".into())?;
    Ok("corpus, dataset CSV, model file and rule cards byte-identical".into())
}

fn c10_lopo() -> Check {
    let programs: Vec<(String, Dataset)> = (0..30)
        .map(|i| {
            let cfg = SynthConfig {
                symbol_prefix: format!("p{i}_"),
                ..SynthConfig::uniform(3, 100 + i)
            };
            (format!("p{i}"), corpus_dataset(&cfg, &FeatureConfig::default()))
        })
        .collect();
    let spec = ModelSpec::new(Algorithm::DecisionTree);
    let res = evaluate_method3(&programs, None, &spec, 10).map_err(|e| e.to_string())?;
    ensure(res.runs.len() == 30, || format!("{} runs", res.runs.len()))?;
    for (i, run) in res.runs.iter().enumerate() {
        let test: BTreeSet<&str> = programs[i].1.rows.iter().map(|r| r.function.as_str()).collect();
        let train: BTreeSet<&str> = programs
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .flat_map(|(_, (_, d))| d.rows.iter().map(|r| r.function.as_str()))
            .collect();
        ensure(test.is_disjoint(&train), || format!("program {i} shares symbols"))?;
        ensure(run.shared_symbols.is_empty(), || {
            format!("{}: {:?}", run.program, run.shared_symbols)
        })?;
        ensure(run.test_rows == test.len() && run.train_rows == train.len(), || {
            format!(
                "{}: {} train / {} test rows",
                run.program, run.train_rows, run.test_rows
            )
        })?;
    }
    Ok(format!(
        "30 runs, symbol sets disjoint, mean accuracy {:.3}",
        res.summary.accuracy.mean
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("generalizer golden suite", Duration::from_secs(1), c1_golden),
        ("metric fixtures", Duration::from_secs(1), c2_confusion_fixture),
        ("dataset-size convention", Duration::from_secs(1), c3_cov_replay),
        ("oracle equivalences", Duration::from_secs(30), c4_oracles),
        ("numerical checks", Duration::from_secs(30), c5_numerics),
        ("separable end-to-end", Duration::from_secs(120), c6_separable),
        ("confusion structure", Duration::from_secs(180), c7_confusable),
        ("planted-rule recovery", Duration::from_secs(60), c8_planted),
        ("determinism", Duration::from_secs(120), c9_determinism),
        ("leave-one-program-out leakage", Duration::from_secs(120), c10_lopo),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = run();
        let elapsed = t.elapsed();
        let result = match result {
            Ok(d) if elapsed > *limit => Err(format!("{d}; took {elapsed:.2?}, limit {limit:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
