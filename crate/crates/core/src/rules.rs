//! Class-association rule mining (Apriori with the consequent fixed to the
//! label), rule verification and plain-text rule cards.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::RuleError;

pub const DEFAULT_MIN_SUPPORT: f64 = 0.01;
pub const DEFAULT_MAX_ANTECEDENTS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationRule {
    /// Feature names, in column order.
    pub antecedents: Vec<String>,
    pub columns: Vec<usize>,
    pub consequent: String,
    pub class: usize,
    /// covered_count / rows.
    pub support: f64,
    /// covered_count / antecedent_count.
    pub confidence: f64,
    pub covered_count: usize,
    pub antecedent_count: usize,
}

impl AssociationRule {
    /// The machine line without its `RULE <n>: ` prefix.
    pub fn body(&self) -> String {
        format!(
            "IF {} THEN {} (support={:.6}, confidence={:.6})",
            self.antecedents.join(" AND "),
            self.consequent,
            self.support,
            self.confidence
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MineParams {
    pub min_support: f64,
    pub max_antecedents: usize,
    pub min_confidence: f64,
}

impl Default for MineParams {
    fn default() -> Self {
        MineParams {
            min_support: DEFAULT_MIN_SUPPORT,
            max_antecedents: DEFAULT_MAX_ANTECEDENTS,
            min_confidence: 1.0,
        }
    }
}

type Bits = Vec<u64>;

fn and_into(acc: &mut Bits, other: &Bits) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a &= b;
    }
}

fn popcount(b: &Bits) -> usize {
    b.iter().map(|w| w.count_ones() as usize).sum()
}

/// Column-major bitsets over the rows.
struct Columns {
    features: Vec<Bits>,
    classes: Vec<Bits>,
    words: usize,
}

impl Columns {
    fn new(d: &Dataset) -> Self {
        let words = d.len().div_ceil(64);
        let mut features = vec![vec![0u64; words]; d.n_features()];
        let mut classes = vec![vec![0u64; words]; d.n_classes()];
        for (r, row) in d.rows.iter().enumerate() {
            for j in row.bits.ones() {
                features[j][r / 64] |= 1 << (r % 64);
            }
            classes[row.class][r / 64] |= 1 << (r % 64);
        }
        Columns {
            features,
            classes,
            words,
        }
    }

    fn matching(&self, items: &[usize]) -> Bits {
        let mut acc = vec![u64::MAX; self.words];
        for &j in items {
            and_into(&mut acc, &self.features[j]);
        }
        acc
    }
}

/// Frequent ruleitems for one class, level by level.
fn mine_class(cols: &Columns, class: usize, n_rows: usize, p: &MineParams) -> Vec<(Vec<usize>, usize)> {
    let frequent = |count: usize| count as f64 / n_rows as f64 >= p.min_support;
    let class_bits = &cols.classes[class];
    let mut out = Vec::new();
    let mut level: Vec<(Vec<usize>, usize)> = (0..cols.features.len())
        .filter_map(|j| {
            let mut b = cols.features[j].clone();
            and_into(&mut b, class_bits);
            let c = popcount(&b);
            frequent(c).then(|| (vec![j], c))
        })
        .collect();
    for size in 1..=p.max_antecedents {
        if level.is_empty() {
            break;
        }
        out.extend(level.iter().cloned());
        if size == p.max_antecedents {
            break;
        }
        let known: HashSet<&[usize]> = level.iter().map(|(s, _)| s.as_slice()).collect();
        let mut next = Vec::new();
        for a in 0..level.len() {
            for b in a + 1..level.len() {
                let (x, y) = (&level[a].0, &level[b].0);
                if x[..size - 1] != y[..size - 1] {
                    // Levels are sorted, so no later partner shares the prefix.
                    break;
                }
                let mut cand = x.clone();
                cand.push(y[size - 1]);
                let all_subsets_frequent = (0..cand.len()).all(|skip| {
                    let sub: Vec<usize> = cand
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, &v)| v)
                        .collect();
                    known.contains(sub.as_slice())
                });
                if !all_subsets_frequent {
                    continue;
                }
                let mut bits = cols.matching(&cand);
                and_into(&mut bits, class_bits);
                let c = popcount(&bits);
                debug_assert!(
                    c <= level[a].1.min(level[b].1),
                    "support must not grow with the itemset"
                );
                if frequent(c) {
                    next.push((cand, c));
                }
            }
        }
        level = next;
    }
    out
}

/// Mine rules `antecedents -> class` whose ruleitem support and confidence
/// clear the thresholds. Sorted by support (desc), antecedent count, then
/// rendered text.
pub fn mine_rules(d: &Dataset, p: &MineParams) -> Result<Vec<AssociationRule>, RuleError> {
    if p.min_support.is_nan() || p.min_support <= 0.0 {
        return Err(RuleError::ZeroSupport);
    }
    if p.min_support > 1.0 || !(0.0..=1.0).contains(&p.min_confidence) {
        return Err(RuleError::Invalid("support and confidence must lie in [0, 1]".into()));
    }
    if p.max_antecedents == 0 {
        return Err(RuleError::Invalid("max_antecedents must be at least 1".into()));
    }
    if d.is_empty() {
        return Err(RuleError::Invalid("cannot mine an empty dataset".into()));
    }
    let cols = Columns::new(d);
    let n = d.len();
    let names = d.vocabulary.names();
    let mut rules: Vec<AssociationRule> = (0..d.n_classes())
        .into_par_iter()
        .flat_map_iter(|class| {
            let cols = &cols;
            mine_class(cols, class, n, p)
                .into_iter()
                .filter_map(move |(items, covered)| {
                    let antecedent_count = popcount(&cols.matching(&items));
                    let confidence = covered as f64 / antecedent_count as f64;
                    (confidence >= p.min_confidence).then(|| AssociationRule {
                        antecedents: items.iter().map(|&j| names[j].clone()).collect(),
                        columns: items,
                        consequent: d.class_name(class).to_string(),
                        class,
                        support: covered as f64 / n as f64,
                        confidence,
                        covered_count: covered,
                        antecedent_count,
                    })
                })
        })
        .collect();
    rules.sort_by(|a, b| {
        b.covered_count
            .cmp(&a.covered_count)
            .then(a.columns.len().cmp(&b.columns.len()))
            .then_with(|| a.body().cmp(&b.body()))
    });
    Ok(rules)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preselection {
    pub columns: Vec<usize>,
    /// Set when the intersection was empty and the union was used instead.
    pub warning: Option<String>,
}

/// Intersection of the column sets picked by several selectors, or their
/// union when they share nothing.
pub fn preselect_columns(selections: &[Vec<usize>]) -> Preselection {
    let Some(first) = selections.first() else {
        return Preselection {
            columns: Vec::new(),
            warning: Some("no selection results given".into()),
        };
    };
    let mut inter: BTreeSet<usize> = first.iter().copied().collect();
    for s in &selections[1..] {
        let other: BTreeSet<usize> = s.iter().copied().collect();
        inter = inter.intersection(&other).copied().collect();
    }
    if !inter.is_empty() {
        return Preselection {
            columns: inter.into_iter().collect(),
            warning: None,
        };
    }
    let union: BTreeSet<usize> = selections.iter().flatten().copied().collect();
    Preselection {
        columns: union.into_iter().collect(),
        warning: Some(format!(
            "the {} selections share no column; using their union",
            selections.len()
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verification {
    pub holds: bool,
    /// First matching row whose label differs from the consequent.
    pub counterexample: Option<usize>,
    pub matched: usize,
    /// The antecedents match no row, so the rule holds vacuously.
    pub zero_support: bool,
}

/// Rescan every row matching the antecedents, looked up by name.
pub fn verify_rule(rule: &AssociationRule, d: &Dataset) -> Result<Verification, RuleError> {
    let cols: Vec<usize> = rule
        .antecedents
        .iter()
        .map(|n| d.vocabulary.get(n).ok_or_else(|| RuleError::UnknownFeature(n.clone())))
        .collect::<Result<_, _>>()?;
    let class = d
        .scheme
        .class_index(&rule.consequent)
        .ok_or_else(|| RuleError::Invalid(format!("class `{}` is not in the dataset scheme", rule.consequent)))?;
    let mut matched = 0;
    let mut counterexample = None;
    for (i, row) in d.rows.iter().enumerate() {
        if cols.iter().all(|&j| row.bits.get(j)) {
            matched += 1;
            if row.class != class && counterexample.is_none() {
                counterexample = Some(i);
            }
        }
    }
    Ok(Verification {
        holds: counterexample.is_none(),
        counterexample,
        matched,
        zero_support: matched == 0,
    })
}

pub const CARDS_HEADER: &str = "# Return-type rules";

fn describe(names: &[&str]) -> String {
    names.iter().map(|n| format!("`{n}`")).collect::<Vec<_>>().join(" and ")
}

/// One card per rule: a machine line, the antecedents split by chunk kind,
/// and a sentence. `provenance` lands under the header.
pub fn render_rule_cards(rules: &[AssociationRule], provenance: &str) -> String {
    let mut out = format!("{CARDS_HEADER}\n");
    if !provenance.is_empty() {
        let _ = writeln!(out, "{provenance}");
    }
    let _ = writeln!(out, "rules: {}", rules.len());
    for (i, r) in rules.iter().enumerate() {
        let ret: Vec<&str> = r
            .antecedents
            .iter()
            .filter(|n| n.starts_with("RET:"))
            .map(String::as_str)
            .collect();
        let post: Vec<&str> = r
            .antecedents
            .iter()
            .filter(|n| !n.starts_with("RET:"))
            .map(String::as_str)
            .collect();
        let _ = writeln!(out, "\nRULE {}: {}", i + 1, r.body());
        for n in &ret {
            let _ = writeln!(out, "  ret: {n}");
        }
        for n in &post {
            let _ = writeln!(out, "  post: {n}");
        }
        let mut clauses = Vec::new();
        if !ret.is_empty() {
            clauses.push(format!("the return site contains {}", describe(&ret)));
        }
        if !post.is_empty() {
            clauses.push(format!("a call site contains {}", describe(&post)));
        }
        let _ = writeln!(
            out,
            "  When {}, the function returns {} ({} of {} matching functions).",
            clauses.join(" and "),
            r.consequent,
            r.covered_count,
            r.antecedent_count
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRule {
    pub number: usize,
    pub antecedents: Vec<String>,
    pub consequent: String,
    pub support: f64,
    pub confidence: f64,
}

/// Read back the machine lines of a card document.
pub fn parse_rule_cards(doc: &str) -> Result<Vec<ParsedRule>, RuleError> {
    let mut lines = doc.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == CARDS_HEADER => {}
        _ => {
            return Err(RuleError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let Some(rest) = line.strip_prefix("RULE ") else {
            continue;
        };
        let err = |message: &str| RuleError::Parse {
            line: i + 1,
            message: message.into(),
        };
        let (num, rest) = rest.split_once(": IF ").ok_or_else(|| err("expected `: IF `"))?;
        let number = num.parse().map_err(|_| err("bad rule number"))?;
        let (body, stats) = rest
            .rsplit_once(" (support=")
            .ok_or_else(|| err("missing statistics"))?;
        let (ante, consequent) = body.rsplit_once(" THEN ").ok_or_else(|| err("missing THEN"))?;
        let (support, confidence) = stats
            .strip_suffix(')')
            .and_then(|s| s.split_once(", confidence="))
            .ok_or_else(|| err("malformed statistics"))?;
        out.push(ParsedRule {
            number,
            antecedents: ante.split(" AND ").map(str::to_string).collect(),
            consequent: consequent.to_string(),
            support: support.parse().map_err(|_| err("bad support"))?,
            confidence: confidence.parse().map_err(|_| err("bad confidence"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitRow;
    use crate::dataset::{DatasetRow, FeatureVocabulary};
    use crate::label::Scheme;

    fn toy(rows: &[(&[usize], &str)], names: &[&str]) -> Dataset {
        let scheme = Scheme::HighLevel;
        Dataset {
            scheme,
            vocabulary: FeatureVocabulary::from_names(names.iter().map(|s| s.to_string()).collect()).unwrap(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (ones, label))| DatasetRow {
                    function: format!("f{i}"),
                    bits: BitRow::from_indices(names.len(), ones.iter().copied()),
                    class: scheme.class_index(label).unwrap(),
                })
                .collect(),
        }
    }

    fn sample() -> Dataset {
        toy(
            &[
                (&[0, 2], "short"),
                (&[0], "short"),
                (&[1, 2], "float"),
                (&[1], "float"),
                (&[2], "bool"),
                (&[2, 3], "char"),
            ],
            &[
                "POST: caller_epilogue|cwde",
                "RET: fstp dword ptr <mem>",
                "RET: mov al, <lit>",
                "POST: movsx edx, al",
            ],
        )
    }

    #[test]
    fn exclusive_features_become_rules() {
        let d = sample();
        let rules = mine_rules(&d, &MineParams::default()).unwrap();
        let short = rules
            .iter()
            .find(|r| r.antecedents == ["POST: caller_epilogue|cwde"])
            .unwrap();
        assert_eq!(short.consequent, "short");
        assert_eq!(short.confidence, 1.0);
        assert_eq!(short.covered_count, 2);
        assert!((short.support - 2.0 / 6.0).abs() < 1e-12);
        // Shared by bool and char, so never certain on its own.
        assert!(!rules.iter().any(|r| r.antecedents == ["RET: mov al, <lit>"]));
        for r in &rules {
            assert!(verify_rule(r, &d).unwrap().holds);
        }
        for w in rules.windows(2) {
            assert!(w[0].covered_count >= w[1].covered_count);
        }
    }

    #[test]
    fn rejects_zero_support() {
        let p = MineParams {
            min_support: 0.0,
            ..MineParams::default()
        };
        assert!(matches!(mine_rules(&sample(), &p), Err(RuleError::ZeroSupport)));
    }

    #[test]
    fn preselection() {
        assert_eq!(preselect_columns(&[vec![1, 2, 3], vec![2, 3, 4]]).columns, vec![2, 3]);
        let same = preselect_columns(&[vec![5, 1], vec![1, 5]]);
        assert_eq!((same.columns, same.warning), (vec![1, 5], None));
        let disjoint = preselect_columns(&[vec![1], vec![2]]);
        assert_eq!(disjoint.columns, vec![1, 2]);
        assert!(disjoint.warning.is_some());
    }

    #[test]
    fn verification_finds_counterexamples() {
        let d = sample();
        let mut rule = mine_rules(&d, &MineParams::default()).unwrap().remove(0);
        rule.antecedents = vec!["RET: mov al, <lit>".into()];
        rule.consequent = "bool".into();
        let v = verify_rule(&rule, &d).unwrap();
        assert_eq!(v.counterexample, Some(0));
        rule.antecedents = vec!["RET: fstp dword ptr <mem>".into(), "POST: caller_epilogue|cwde".into()];
        let v = verify_rule(&rule, &d).unwrap();
        assert!(v.holds && v.zero_support);
        rule.antecedents = vec!["RET: nope".into()];
        assert!(matches!(verify_rule(&rule, &d), Err(RuleError::UnknownFeature(_))));
    }

    #[test]
    fn cards_round_trip() {
        let d = sample();
        let rules = mine_rules(&d, &MineParams::default()).unwrap();
        let doc = render_rule_cards(&rules, "dataset 0123 seed 7");
        let parsed = parse_rule_cards(&doc).unwrap();
        assert_eq!(parsed.len(), rules.len());
        for (p, r) in parsed.iter().zip(&rules) {
            assert_eq!(p.antecedents, r.antecedents);
            assert_eq!(p.consequent, r.consequent);
            assert!((p.support - r.support).abs() < 1e-6);
        }
        let empty = render_rule_cards(&[], "");
        assert!(empty.starts_with(CARDS_HEADER));
        assert!(parse_rule_cards(&empty).unwrap().is_empty());
    }
}
