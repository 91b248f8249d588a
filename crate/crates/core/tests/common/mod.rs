//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng as _;
use retypelab::asm::{parse_instruction, Instruction, ParseOptions};
use retypelab::bits::BitRow;
use retypelab::dataset::{Dataset, DatasetRow, FeatureVocabulary};
use retypelab::eval::Metrics;
use retypelab::generalize::{generalize_instruction, match_sequence_macros};
use retypelab::seed;
use retypelab::Scheme;

pub const GOLDEN: &str = include_str!("../fixtures/generalization_golden.tsv");
pub const CONFUSION: &str = include_str!("../fixtures/reference_confusion.csv");

#[derive(Debug)]
pub struct GoldenPair {
    pub macro_row: bool,
    pub input: Vec<String>,
    pub expected: Vec<String>,
}

pub fn golden_pairs() -> Vec<GoldenPair> {
    GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            assert_eq!(cols.len(), 3, "bad fixture line {l}");
            GoldenPair {
                macro_row: cols[0] == "macro",
                input: cols[1].split(" ; ").map(str::to_string).collect(),
                expected: cols[2].split(" || ").map(str::to_string).collect(),
            }
        })
        .collect()
}

fn parse(line: &str) -> Instruction {
    parse_instruction(line, ParseOptions::default()).unwrap()
}

/// `Ok` when the generalizer reproduces the pair exactly.
pub fn check_golden(p: &GoldenPair) -> Result<(), String> {
    let seq: Vec<Instruction> = p.input.iter().map(|l| parse(l)).collect();
    if p.macro_row {
        let m = match_sequence_macros(&seq);
        let whole: Vec<String> = m
            .iter()
            .filter(|m| m.span() == (0, seq.len()))
            .map(|m| m.to_string())
            .collect();
        if whole != p.expected {
            return Err(format!("{:?}: got {whole:?}, want {:?}", p.input, p.expected));
        }
    } else {
        let got: Vec<String> = generalize_instruction(&seq[0]).iter().map(|g| g.to_string()).collect();
        for e in &p.expected {
            if !got.contains(e) {
                return Err(format!("{:?}: `{e}` missing from {got:?}", p.input));
            }
        }
    }
    Ok(())
}

/// Canonical class names and matrix rows of the reference confusion matrix.
pub fn reference_confusion() -> Metrics {
    let mut lines = CONFUSION.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').skip(1).collect();
    let conf: Vec<Vec<usize>> = lines
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let names: Vec<&str> = header.clone();
    assert_eq!(names, Scheme::HighLevel.class_names());
    Metrics::from_confusion(&names, conf).unwrap()
}

/// Round to three significant figures, as text.
pub fn sig3(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let digits = 2 - x.abs().log10().floor() as i32;
    format!("{:.*}", digits.max(0) as usize, x)
}

/// Random high-level dataset; every class in `0..n_classes` gets at least
/// two rows when `n_rows >= 2 * n_classes`.
pub fn random_dataset(s: u64, n_rows: usize, n_features: usize, n_classes: usize, density: f64) -> Dataset {
    let mut rng = seed::rng_from(s);
    let names = (0..n_features).map(|j| format!("RET: f{j}")).collect();
    let rows = (0..n_rows)
        .map(|i| {
            let class = if i < 2 * n_classes {
                i % n_classes
            } else {
                rng.gen_range(0..n_classes)
            };
            let bools: Vec<bool> = (0..n_features).map(|_| rng.gen_bool(density)).collect();
            DatasetRow {
                function: format!("_r{i}"),
                bits: BitRow::from_bools(&bools),
                class,
            }
        })
        .collect();
    Dataset {
        scheme: Scheme::HighLevel,
        vocabulary: FeatureVocabulary::from_names(names).unwrap(),
        rows,
    }
}

/// Rows where feature `class` (mod n_features) is set iff the label is
/// `class`, plus noise columns.
pub fn planted_dataset(s: u64, per_class: usize, n_classes: usize, noise: usize) -> Dataset {
    let mut rng = seed::rng_from(s);
    let n_features = n_classes + noise;
    let names = (0..n_classes)
        .map(|c| format!("RET: signal{c}"))
        .chain((0..noise).map(|j| format!("POST: noise{j}")))
        .collect();
    let mut rows = Vec::new();
    for c in 0..n_classes {
        for i in 0..per_class {
            let mut bools = vec![false; n_features];
            bools[c] = true;
            for b in bools.iter_mut().skip(n_classes) {
                *b = rng.gen_bool(0.5);
            }
            rows.push(DatasetRow {
                function: format!("_c{c}_{i}"),
                bits: BitRow::from_bools(&bools),
                class: c,
            });
        }
    }
    Dataset {
        scheme: Scheme::HighLevel,
        vocabulary: FeatureVocabulary::from_names(names).unwrap(),
        rows,
    }
}

/// Naive Bayes posteriors from an explicit table of the full joint
/// distribution over every class and feature vector.
pub fn nb_posterior_by_enumeration(d: &Dataset, alpha: f64, query: &[bool]) -> Vec<f64> {
    let f = d.n_features();
    assert!(f <= 12);
    let c_n = d.n_classes();
    let n = d.len() as f64;
    let mut class_rows = vec![0f64; c_n];
    let mut ones = vec![vec![0f64; f]; c_n];
    for r in &d.rows {
        class_rows[r.class] += 1.0;
        for (j, o) in ones[r.class].iter_mut().enumerate() {
            if r.bits.get(j) {
                *o += 1.0;
            }
        }
    }
    // joint[c][v] = P(c) * prod_j P(x_j = v_j | c)
    let mut joint = vec![vec![0f64; 1 << f]; c_n];
    for c in 0..c_n {
        let prior = class_rows[c] / n;
        for (v, cell) in joint[c].iter_mut().enumerate() {
            let mut p = prior;
            for (j, &o) in ones[c].iter().enumerate() {
                let pj = (o + alpha) / (class_rows[c] + 2.0 * alpha);
                p *= if v >> j & 1 == 1 { pj } else { 1.0 - pj };
            }
            *cell = p;
        }
    }
    let total: f64 = joint.iter().flatten().sum();
    assert!((total - 1.0).abs() < 1e-12, "joint table sums to {total}");
    let v: usize = query.iter().enumerate().map(|(j, &b)| usize::from(b) << j).sum();
    let evidence: f64 = (0..c_n).map(|c| joint[c][v]).sum();
    (0..c_n).map(|c| joint[c][v] / evidence).collect()
}

/// Every (antecedent columns, class, covered count) clearing the thresholds,
/// by enumerating all column subsets.
pub fn exhaustive_rules(
    d: &Dataset,
    min_support: f64,
    max_antecedents: usize,
    min_confidence: f64,
) -> BTreeSet<(Vec<usize>, usize, usize)> {
    let f = d.n_features();
    assert!(f <= 16);
    let n = d.len() as f64;
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << f) {
        if mask.count_ones() as usize > max_antecedents {
            continue;
        }
        let cols: Vec<usize> = (0..f).filter(|j| mask >> j & 1 == 1).collect();
        let matching: Vec<&DatasetRow> = d.rows.iter().filter(|r| cols.iter().all(|&j| r.bits.get(j))).collect();
        for c in 0..d.n_classes() {
            let covered = matching.iter().filter(|r| r.class == c).count();
            if covered as f64 / n >= min_support && covered as f64 / matching.len() as f64 >= min_confidence {
                out.insert((cols.clone(), c, covered));
            }
        }
    }
    out
}

/// Central differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
