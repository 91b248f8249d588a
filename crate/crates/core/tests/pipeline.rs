mod common;

use std::time::Instant;

use rand::seq::SliceRandom;
use retypelab::asm::{parse_listing, ParseOptions};
use retypelab::classifiers::{load_model, save_model, train, Algorithm, ModelSpec};
use retypelab::dataset::{build_dataset, Dataset, FeatureConfig};
use retypelab::eval::{
    converge_dataset_size, evaluate_method1, evaluate_method2, evaluate_method3, Method2Options, SizeOptions,
};
use retypelab::selection::{accuracy, select_features, SelectionMethod};
use retypelab::synth::{synthesize_corpus, SynthConfig};
use retypelab::{seed, Scheme};

use common::*;

fn corpus_dataset(cfg: &SynthConfig, features: &FeatureConfig) -> Dataset {
    build_dataset(&synthesize_corpus(cfg).unwrap(), features, Scheme::HighLevel).0
}

#[test]
fn golden_rows_reproduce_quickly() {
    let t = Instant::now();
    let pairs = golden_pairs();
    assert_eq!(pairs.len(), 20);
    let failures: Vec<String> = pairs.iter().filter_map(|p| check_golden(p).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

const TWO_FUNCTIONS: &str = "\
.func _callee ret=short
    push ebp
    mov ebp, esp
    movsx eax, word ptr [ebp+var_4]
    pop ebp
    retn
.endfunc
.func _caller ret=int
    push ebp
    mov ebp, esp
    call _callee
    cwde
    mov eax, 7
    pop ebp
    retn
.endfunc
";

#[test]
fn post_call_patterns_land_on_the_callee_row() {
    let functions = parse_listing(TWO_FUNCTIONS, ParseOptions::default()).unwrap();
    let cfg = FeatureConfig {
        min_support_rows: 1,
        ..FeatureConfig::default()
    };
    let (d, _) = build_dataset(&functions, &cfg, Scheme::HighLevel);
    let row = |name: &str| d.rows.iter().find(|r| r.function == name).unwrap();
    let post: Vec<usize> = (0..d.n_features())
        .filter(|&j| d.vocabulary.names()[j].starts_with("POST: "))
        .collect();
    assert!(!post.is_empty());
    for &j in &post {
        assert!(row("_callee").bits.get(j), "{}", d.vocabulary.names()[j]);
        assert!(!row("_caller").bits.get(j), "{}", d.vocabulary.names()[j]);
    }
    assert!(d.vocabulary.get("POST: caller_epilogue | cwde").is_some());
}

#[test]
fn planted_column_support_equals_class_count() {
    let functions = synthesize_corpus(&SynthConfig::uniform(40, 3)).unwrap();
    let (d, _) = build_dataset(&functions, &FeatureConfig::default(), Scheme::HighLevel);
    let support = d.column_support();
    let counts = d.class_counts();
    for (feature, class) in [
        ("POST: caller_epilogue | cwde", "short"),
        ("POST: #fp_fstp=dword", "float"),
        ("POST: #fp_fstp=qword", "double"),
    ] {
        let j = d.vocabulary.get(feature).unwrap();
        assert_eq!(support[j], counts[d.scheme.class_index(class).unwrap()], "{feature}");
    }
    // Only one pointer template computes its result with `lea eax`.
    let lea_eax = functions
        .iter()
        .filter(|f| f.true_return_type.is_some())
        .filter(|f| {
            f.instructions
                .iter()
                .any(|i| i.mnemonic == "lea" && i.to_string().starts_with("lea eax,"))
        })
        .count();
    assert!(lea_eax > 0);
    assert_eq!(support[d.vocabulary.get("RET: #lea_eax").unwrap()], lea_eax);
}

#[test]
fn separable_corpus_fits_on_ret_features_alone() {
    let d = corpus_dataset(&SynthConfig::uniform(30, 4), &FeatureConfig::ret_only());
    let m = train(&ModelSpec::new(Algorithm::DecisionTree), &d).unwrap();
    assert_eq!(accuracy(&m.predict_dataset(&d).unwrap(), &d.labels()), 1.0);
}

#[test]
fn confusable_bool_and_char_share_ret_features() {
    let cfg = SynthConfig {
        confusable_mode: true,
        ..SynthConfig::uniform(60, 5)
    };
    let d = corpus_dataset(&cfg, &FeatureConfig::ret_only());
    let (b, c) = (
        d.scheme.class_index("bool").unwrap(),
        d.scheme.class_index("char").unwrap(),
    );
    let rows: Vec<usize> = (0..d.len())
        .filter(|&i| d.rows[i].class == b || d.rows[i].class == c)
        .collect();
    let sub = d.subset(&rows);
    let m = train(&ModelSpec::new(Algorithm::DecisionTree), &sub).unwrap();
    let acc = accuracy(&m.predict_dataset(&sub).unwrap(), &sub.labels());
    assert!(acc < 0.9, "bool and char separate on RET features: {acc}");
}

#[test]
fn selection_drops_planted_noise() {
    let d = planted_dataset(1, 20, 10, 40);
    let report = select_features(
        &d,
        &ModelSpec::new(Algorithm::DecisionTree),
        &SelectionMethod::default_menu(),
        1,
    )
    .unwrap();
    let w = report.winner();
    let noise_kept = w.selected.iter().filter(|&&j| j >= 10).count();
    assert!(noise_kept <= 4, "{} noise columns kept by {}", noise_kept, w.method);
    assert!(w.cv_accuracy > 0.95);
}

#[test]
fn selected_features_beat_random_subsets() {
    let mut wins = 0;
    for s in 0..20u64 {
        let d = planted_dataset(100 + s, 12, 10, 30);
        let spec = ModelSpec::new(Algorithm::DecisionTree).with("max_depth", 4);
        let methods = [SelectionMethod::default_menu()[0]];
        let selected = select_features(&d, &spec, &methods, s)
            .unwrap()
            .winner()
            .selected
            .clone();
        let mut cols: Vec<usize> = (0..d.n_features()).collect();
        cols.shuffle(&mut seed::rng_from(s));
        let mut random = cols[..selected.len()].to_vec();
        random.sort_unstable();
        let fit = |c: &[usize]| {
            let sub = d.select_columns(c).unwrap();
            let m = train(&spec, &sub).unwrap();
            accuracy(&m.predict_dataset(&sub).unwrap(), &sub.labels())
        };
        if fit(&selected) >= fit(&random) {
            wins += 1;
        }
    }
    assert!(wins >= 16, "selected set won on {wins}/20 seeds");
}

#[test]
fn reloaded_models_predict_identically() {
    let d = random_dataset(7, 80, 10, 5, 0.4);
    let dir = tempfile::tempdir().unwrap();
    for a in Algorithm::ALL {
        let spec = match a {
            Algorithm::RandomForest | Algorithm::ExtraTrees => ModelSpec::new(a).with("n_trees", 5),
            Algorithm::GradientBoosting => ModelSpec::new(a).with("rounds", 5),
            _ => ModelSpec::new(a),
        };
        let m = train(&spec, &d).unwrap();
        let path = dir.path().join(format!("{a}.json"));
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.predict_dataset(&d).unwrap(), m.predict_dataset(&d).unwrap(), "{a}");
        for r in &d.rows {
            assert_eq!(back.scores(&r.bits).unwrap(), m.scores(&r.bits).unwrap(), "{a}");
        }
    }
}

#[test]
fn evaluation_methods_run_end_to_end() {
    let synth = corpus_dataset(&SynthConfig::uniform(12, 8), &FeatureConfig::default());
    let real_cfg = SynthConfig {
        symbol_prefix: "real_".into(),
        ..SynthConfig::uniform(15, 9)
    };
    let real = build_dataset(
        &synthesize_corpus(&real_cfg).unwrap(),
        &FeatureConfig::default(),
        Scheme::HighLevel,
    )
    .0;
    let spec = ModelSpec::new(Algorithm::DecisionTree);

    let m1 = evaluate_method1(Some(&real), &synth, &spec, 5, 1).unwrap();
    assert_eq!(m1.accuracy.values.len(), 5);
    assert!(m1.accuracy.ci95.0 <= m1.accuracy.mean && m1.accuracy.mean <= m1.accuracy.ci95.1);

    let opts = Method2Options {
        step_percent: 10,
        window: 3,
        threshold: 0.05,
        reps: 2,
    };
    let m2 = evaluate_method2(&real, &synth, &spec, &opts, 1).unwrap();
    assert!(!m2.trace.xs.is_empty());
    assert!(m2.trace.xs.windows(2).all(|w| w[0] < w[1]));

    let programs = vec![("a".to_string(), synth.clone()), ("b".to_string(), real.clone())];
    let m3 = evaluate_method3(&programs, None, &spec, 1).unwrap();
    assert_eq!(m3.runs.len(), 2);
    assert!(m3.runs.iter().all(|r| r.shared_symbols.is_empty()));

    let size = SizeOptions {
        start: 100,
        step: 100,
        window: 3,
        threshold: 0.05,
        max_points: 6,
    };
    let trace = converge_dataset_size(&SynthConfig::uniform(1, 2), &FeatureConfig::default(), &spec, &size, 2).unwrap();
    assert!(!trace.xs.is_empty() && trace.xs.len() <= 6);
}
