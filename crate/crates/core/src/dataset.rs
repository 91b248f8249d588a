//! Binary occurrence matrices: one row per labeled function, one column per
//! generalized pattern.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::asm::FunctionListing;
use crate::bits::BitRow;
use crate::error::DatasetError;
use crate::extract::{extract_bundle, ChunkBundle, DEFAULT_MAX_LEN};
use crate::generalize::{advanced_features, generalize_chunk, ChunkRef, DEFAULT_BUDGET};
use crate::label::{Scheme, TypeLabel};

/// Ordered, duplicate-free feature names.
#[derive(Clone, Debug, Default)]
pub struct FeatureVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for FeatureVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl Eq for FeatureVocabulary {}

impl FeatureVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: Vec<String>) -> Result<Self, DatasetError> {
        let mut v = FeatureVocabulary::new();
        for n in names {
            if v.index.contains_key(&n) {
                return Err(DatasetError::Header(format!("duplicate feature `{n}`")));
            }
            v.insert(n);
        }
        Ok(v)
    }

    /// Column of `name`, appending it when new.
    pub fn insert(&mut self, name: String) -> usize {
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// First 64 bits of a SHA-256 over the ordered names, as hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetRow {
    pub function: String,
    pub bits: BitRow,
    /// Class index under the dataset's scheme.
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub scheme: Scheme,
    pub vocabulary: FeatureVocabulary,
    pub rows: Vec<DatasetRow>,
}

/// Which pattern families feed the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub ret: bool,
    pub post: bool,
    pub advanced: bool,
    pub max_len: usize,
    pub budget: usize,
    /// Features seen in fewer rows are dropped; 1 keeps everything.
    pub min_support_rows: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ret: true,
            post: true,
            advanced: true,
            max_len: DEFAULT_MAX_LEN,
            budget: DEFAULT_BUDGET,
            min_support_rows: 2,
        }
    }
}

impl FeatureConfig {
    /// RET and POST patterns without the discriminators.
    pub fn basic() -> Self {
        FeatureConfig {
            advanced: false,
            ..Default::default()
        }
    }

    pub fn ret_only() -> Self {
        FeatureConfig {
            post: false,
            advanced: false,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// Functions without ground truth, left out of the rows.
    pub unlabeled: Vec<String>,
    /// Labeled functions with no return site.
    pub without_ret: Vec<String>,
    /// Patterns dropped by the per-chunk budget.
    pub truncated_patterns: usize,
    /// Features removed by the minimum-support filter.
    pub pruned_features: usize,
}

fn function_patterns(bundle: &ChunkBundle, name: &str, cfg: &FeatureConfig) -> (Vec<String>, usize) {
    let mut out = Vec::new();
    let mut truncated = 0;
    if cfg.ret {
        for c in bundle.ret_chunks(name) {
            let g = generalize_chunk(ChunkRef::Ret(c), cfg.budget);
            truncated += g.truncated;
            out.extend(g.patterns.into_iter().map(|p| p.canonical_name));
        }
    }
    if cfg.advanced {
        for c in bundle.ret_chunks(name) {
            out.extend(
                advanced_features(ChunkRef::Ret(c))
                    .into_iter()
                    .map(|p| p.canonical_name),
            );
        }
    }
    if cfg.post {
        for c in bundle.post_chunks(name) {
            let g = generalize_chunk(ChunkRef::Post(c), cfg.budget);
            truncated += g.truncated;
            out.extend(g.patterns.into_iter().map(|p| p.canonical_name));
        }
    }
    if cfg.advanced {
        for c in bundle.post_chunks(name) {
            out.extend(
                advanced_features(ChunkRef::Post(c))
                    .into_iter()
                    .map(|p| p.canonical_name),
            );
        }
    }
    (out, truncated)
}

/// Build the occurrence matrix for every labeled function. Cell (f, p) is 1
/// iff p came from a return site of f or from a call site whose callee is f.
pub fn build_dataset(functions: &[FunctionListing], cfg: &FeatureConfig, scheme: Scheme) -> (Dataset, BuildReport) {
    let bundle = extract_bundle(functions, cfg.max_len);
    let mut report = BuildReport::default();
    let labeled: Vec<(&FunctionListing, TypeLabel)> = functions
        .iter()
        .filter_map(|f| match f.true_return_type {
            Some(t) => Some((f, t)),
            None => {
                report.unlabeled.push(f.name.clone());
                None
            }
        })
        .collect();
    let no_ret: HashSet<&str> = bundle.diagnostics.iter().map(String::as_str).collect();
    report.without_ret = labeled
        .iter()
        .filter(|(f, _)| no_ret.contains(f.name.as_str()))
        .map(|(f, _)| f.name.clone())
        .collect();

    let per_function: Vec<(Vec<String>, usize)> = labeled
        .par_iter()
        .map(|(f, _)| function_patterns(&bundle, &f.name, cfg))
        .collect();

    let mut vocabulary = FeatureVocabulary::new();
    let columns: Vec<Vec<usize>> = per_function
        .into_iter()
        .map(|(names, truncated)| {
            report.truncated_patterns += truncated;
            names.into_iter().map(|n| vocabulary.insert(n)).collect()
        })
        .collect();
    let width = vocabulary.len();
    let rows = labeled
        .iter()
        .zip(columns)
        .map(|((f, t), cols)| DatasetRow {
            function: f.name.clone(),
            bits: BitRow::from_indices(width, cols),
            class: scheme.class_of(*t),
        })
        .collect();
    let dataset = Dataset {
        scheme,
        vocabulary,
        rows,
    };
    if cfg.min_support_rows > 1 {
        let (pruned, dropped) = dataset.prune_rare(cfg.min_support_rows);
        report.pruned_features = dropped;
        (pruned, report)
    } else {
        (dataset, report)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedFunction {
    pub name: String,
    pub label: Option<TypeLabel>,
    pub bits: BitRow,
    /// Distinct patterns missing from the vocabulary.
    pub unknown_patterns: usize,
}

/// Rows for every function that has a return site, labeled or not, over a
/// fixed vocabulary.
pub fn featurize(
    functions: &[FunctionListing],
    cfg: &FeatureConfig,
    vocabulary: &FeatureVocabulary,
) -> Vec<FeaturizedFunction> {
    let bundle = extract_bundle(functions, cfg.max_len);
    let no_ret: HashSet<&str> = bundle.diagnostics.iter().map(String::as_str).collect();
    functions
        .par_iter()
        .filter(|f| !no_ret.contains(f.name.as_str()) && !f.return_indices().is_empty())
        .map(|f| {
            let (names, _) = function_patterns(&bundle, &f.name, cfg);
            let distinct: HashSet<String> = names.into_iter().collect();
            let cols: Vec<usize> = distinct.iter().filter_map(|n| vocabulary.get(n)).collect();
            FeaturizedFunction {
                name: f.name.clone(),
                label: f.true_return_type,
                unknown_patterns: distinct.len() - cols.len(),
                bits: BitRow::from_indices(vocabulary.len(), cols),
            }
        })
        .collect()
}

/// Union of two datasets over the same scheme. Columns keep `a`'s order,
/// then `b`'s new names.
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset, DatasetError> {
    if a.scheme != b.scheme {
        return Err(DatasetError::SchemeMismatch(a.scheme.to_string(), b.scheme.to_string()));
    }
    let mut vocabulary = a.vocabulary.clone();
    let b_map: Vec<usize> = b
        .vocabulary
        .names()
        .iter()
        .map(|n| vocabulary.insert(n.clone()))
        .collect();
    let width = vocabulary.len();
    let mut rows: Vec<DatasetRow> = a
        .rows
        .iter()
        .map(|r| DatasetRow {
            function: r.function.clone(),
            bits: BitRow::from_indices(width, r.bits.ones()),
            class: r.class,
        })
        .collect();
    rows.extend(b.rows.iter().map(|r| DatasetRow {
        function: r.function.clone(),
        bits: BitRow::from_indices(width, r.bits.ones().map(|i| b_map[i])),
        class: r.class,
    }));
    Ok(Dataset {
        scheme: a.scheme,
        vocabulary,
        rows,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sidecar file holding one function symbol per data row.
pub fn names_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".names");
    PathBuf::from(s)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

impl Dataset {
    pub fn empty(scheme: Scheme) -> Self {
        Dataset {
            scheme,
            vocabulary: FeatureVocabulary::new(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_classes(&self) -> usize {
        self.scheme.n_classes()
    }

    pub fn class_name(&self, class: usize) -> &'static str {
        self.scheme.class_names()[class]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for r in &self.rows {
            c[r.class] += 1;
        }
        c
    }

    /// Classes present with fewer than two rows; stratified splits cannot
    /// place them on both sides.
    pub fn unstratifiable_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 1)
            .map(|(c, _)| c)
            .collect()
    }

    /// Number of rows where each column is set.
    pub fn column_support(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_features()];
        for r in &self.rows {
            for i in r.bits.ones() {
                s[i] += 1;
            }
        }
        s
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            scheme: self.scheme,
            vocabulary: self.vocabulary.clone(),
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Keep only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset, DatasetError> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(DatasetError::Column(bad));
        }
        let names = columns.iter().map(|&c| self.vocabulary.names[c].clone()).collect();
        Ok(Dataset {
            scheme: self.scheme,
            vocabulary: FeatureVocabulary::from_names(names)?,
            rows: self
                .rows
                .iter()
                .map(|r| DatasetRow {
                    function: r.function.clone(),
                    bits: r.bits.project(columns),
                    class: r.class,
                })
                .collect(),
        })
    }

    /// Drop columns set in fewer than `min_rows` rows; returns the count
    /// removed.
    pub fn prune_rare(&self, min_rows: usize) -> (Dataset, usize) {
        let keep: Vec<usize> = self
            .column_support()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= min_rows)
            .map(|(i, _)| i)
            .collect();
        let dropped = self.n_features() - keep.len();
        (self.select_columns(&keep).expect("columns in range"), dropped)
    }

    /// Regroup a high-level dataset into the size/representation classes.
    pub fn to_size_rep(&self) -> Dataset {
        if self.scheme == Scheme::SizeRep {
            return self.clone();
        }
        Dataset {
            scheme: Scheme::SizeRep,
            vocabulary: self.vocabulary.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| DatasetRow {
                    class: TypeLabel::ALL[r.class].size_rep().index(),
                    ..r.clone()
                })
                .collect(),
        }
    }

    /// Feature columns as boolean vectors.
    pub fn matrix(&self) -> Vec<Vec<bool>> {
        self.rows.iter().map(|r| r.bits.to_bools()).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("#scheme={}\n", self.scheme);
        let header: Vec<String> = self
            .vocabulary
            .names
            .iter()
            .map(|n| quote(n))
            .chain(std::iter::once(quote("return_type")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        let width = self.n_features();
        let mut line = String::with_capacity(2 * width + 16);
        for r in &self.rows {
            line.clear();
            for i in 0..width {
                line.push(if r.bits.get(i) { '1' } else { '0' });
                line.push(',');
            }
            line.push_str(self.class_name(r.class));
            line.push('\n');
            out.push_str(&line);
        }
        out
    }

    pub fn names_string(&self) -> String {
        self.rows.iter().map(|r| format!("{}\n", r.function)).collect()
    }

    /// Parse CSV text plus the sidecar symbol list (`None` numbers the rows).
    pub fn from_csv_str(text: &str, names: Option<&str>) -> Result<Dataset, DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let pragma = records
            .next()
            .ok_or_else(|| DatasetError::Header("empty file".into()))??;
        let scheme_text = pragma
            .get(0)
            .and_then(|p| p.strip_prefix("#scheme="))
            .filter(|_| pragma.len() == 1)
            .ok_or_else(|| DatasetError::Header("first row must be `#scheme=<scheme>`".into()))?;
        let scheme: Scheme = scheme_text
            .parse()
            .map_err(|_| DatasetError::Header(format!("unknown scheme `{scheme_text}`")))?;
        let header = records
            .next()
            .ok_or_else(|| DatasetError::Header("missing column header".into()))??;
        let mut cols: Vec<String> = header.iter().map(str::to_string).collect();
        if cols.last().map(String::as_str) != Some("return_type") {
            return Err(DatasetError::Header("last column must be `return_type`".into()));
        }
        cols.pop();
        let vocabulary = FeatureVocabulary::from_names(cols)?;
        let width = vocabulary.len();
        let symbols: Option<Vec<&str>> = names.map(|n| n.lines().collect());
        let mut rows = Vec::new();
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            let row_no = i + 1;
            if rec.len() != width + 1 {
                return Err(DatasetError::Row {
                    row: row_no,
                    message: format!("expected {} cells, found {}", width + 1, rec.len()),
                });
            }
            let mut bits = BitRow::zeros(width);
            for (c, cell) in rec.iter().take(width).enumerate() {
                match cell {
                    "1" => bits.set(c),
                    "0" => {}
                    other => {
                        return Err(DatasetError::Cell {
                            row: row_no,
                            column: c + 1,
                            value: other.to_string(),
                        })
                    }
                }
            }
            let label = &rec[width];
            let class = scheme.class_index(label).ok_or_else(|| DatasetError::UnknownLabel {
                row: row_no,
                label: label.to_string(),
            })?;
            let function = match &symbols {
                Some(s) => s
                    .get(i)
                    .ok_or_else(|| DatasetError::Row {
                        row: row_no,
                        message: "no symbol in the names file".into(),
                    })?
                    .to_string(),
                None => format!("row_{row_no}"),
            };
            rows.push(DatasetRow { function, bits, class });
        }
        if let Some(s) = &symbols {
            if s.len() != rows.len() {
                return Err(DatasetError::Row {
                    row: rows.len(),
                    message: format!("names file lists {} symbols for {} rows", s.len(), rows.len()),
                });
            }
        }
        Ok(Dataset {
            scheme,
            vocabulary,
            rows,
        })
    }
}

/// Write `path` and its `.names` sidecar.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(d.to_csv_string().as_bytes()).map_err(|e| io_err(path, e))?;
    let np = names_path(path);
    fs::write(&np, d.names_string()).map_err(|e| io_err(&np, e))
}

/// Read `path`; the `.names` sidecar is used when present.
pub fn read_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let np = names_path(path);
    let names = if np.exists() {
        Some(fs::read_to_string(&np).map_err(|e| io_err(&np, e))?)
    } else {
        None
    };
    Dataset::from_csv_str(&text, names.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_listing, ParseOptions};

    fn corpus() -> Vec<FunctionListing> {
        let text = "\
.func _f1 ret=int
    push ebp
    mov ebp, esp
    mov eax, 5
    pop ebp
    retn
.endfunc
.func _f2 ret=short
    mov ax, 7
    retn
.endfunc
.func _main
    call _f2
    cwde
    retn
.endfunc
";
        parse_listing(text, ParseOptions::default()).unwrap()
    }

    fn all_features() -> FeatureConfig {
        FeatureConfig {
            min_support_rows: 1,
            ..FeatureConfig::basic()
        }
    }

    #[test]
    fn occurrence_rows() {
        let (d, report) = build_dataset(&corpus(), &all_features(), Scheme::HighLevel);
        assert_eq!(report.unlabeled, ["_main"]);
        assert_eq!(d.len(), 2);
        let c = d.vocabulary.get("RET: {mov} eax, 5 | callee_epilogue").unwrap();
        assert!(d.rows[0].bits.get(c));
        assert!(!d.rows[1].bits.get(c));
        assert_eq!(d.class_name(d.rows[0].class), "int");
        let p = d.vocabulary.get("POST: caller_epilogue | cwde").unwrap();
        assert!(d.rows[1].bits.get(p));
        assert!(!d.rows[0].bits.get(p));
        assert_eq!(d.class_name(d.rows[1].class), "short");
    }

    #[test]
    fn duplicate_returns_set_one_bit() {
        let text = ".func _g ret=int\n    mov eax, 1\n    retn\n    mov eax, 2\n    retn\n.endfunc\n";
        let fs = parse_listing(text, ParseOptions::default()).unwrap();
        let (d, _) = build_dataset(&fs, &all_features(), Scheme::HighLevel);
        let c = d.vocabulary.get("RET: mov eax, <lit> | callee_epilogue").unwrap();
        assert!(d.rows[0].bits.get(c));
        assert_eq!(d.column_support()[c], 1);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let (d, _) = build_dataset(&corpus(), &all_features(), Scheme::HighLevel);
        let csv = d.to_csv_string();
        assert!(csv.starts_with("#scheme=high_level\n\""));
        assert!(csv.lines().nth(1).unwrap().ends_with(",\"return_type\""));
        let back = Dataset::from_csv_str(&csv, Some(&d.names_string())).unwrap();
        assert_eq!(back, d);

        let bad = csv.replacen("\n1,", "\n2,", 1);
        let err = Dataset::from_csv_str(&bad, None).unwrap_err();
        assert!(matches!(err, DatasetError::Cell { row: 1, column: 1, .. }), "{err}");
        let bad = "#scheme=high_level\n\"a\",\"label\"\n1,int\n";
        assert!(matches!(Dataset::from_csv_str(bad, None), Err(DatasetError::Header(_))));
        let bad = "#scheme=high_level\n\"a\",\"return_type\"\n1,quad\n";
        assert!(matches!(
            Dataset::from_csv_str(bad, None),
            Err(DatasetError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn merge_projects_rows() {
        let mut a = Dataset::empty(Scheme::HighLevel);
        for n in ["x", "y", "z"] {
            a.vocabulary.insert(n.into());
        }
        a.rows.push(DatasetRow {
            function: "a".into(),
            bits: BitRow::from_indices(3, [2]),
            class: 0,
        });
        let mut b = Dataset::empty(Scheme::HighLevel);
        for n in ["p", "z"] {
            b.vocabulary.insert(n.into());
        }
        b.rows.push(DatasetRow {
            function: "b".into(),
            bits: BitRow::from_indices(2, [0, 1]),
            class: 1,
        });
        let m = merge_datasets(&a, &b).unwrap();
        assert_eq!(m.vocabulary.names(), ["x", "y", "z", "p"]);
        assert_eq!(m.rows[1].bits.ones().collect::<Vec<_>>(), [2, 3]);
        assert_eq!(m.column_support()[2], 2);
        assert_eq!(merge_datasets(&a, &Dataset::empty(Scheme::HighLevel)).unwrap(), a);
        assert!(merge_datasets(&a, &Dataset::empty(Scheme::SizeRep)).is_err());
    }

    #[test]
    fn size_rep_and_pruning() {
        let (d, _) = build_dataset(&corpus(), &all_features(), Scheme::HighLevel);
        let s = d.to_size_rep();
        assert_eq!(s.class_name(s.rows[0].class), "INT_4");
        assert_eq!(s.class_name(s.rows[1].class), "INT_2");
        let (p, dropped) = d.prune_rare(2);
        assert_eq!(dropped, d.n_features() - p.n_features());
        assert!(p.column_support().iter().all(|&c| c >= 2));
    }
}
