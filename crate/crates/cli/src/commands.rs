use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

use retypelab::asm::{parse_listing, FunctionListing, ParseOptions};
use retypelab::classifiers::{load_model, save_model, train, Fingerprint, ModelSpec, TrainedModel};
use retypelab::dataset::{build_dataset, featurize, read_csv, write_csv, Dataset, FeatureVocabulary};
use retypelab::eval::{
    converge_dataset_size, decompiler_baselines, evaluate_method1, evaluate_method2, evaluate_method3, Method2Options,
    MetricSummary, SizeOptions,
};
use retypelab::rules::{mine_rules, preselect_columns, render_rule_cards};
use retypelab::selection::{grid_search, select_features, GridSpec};
use retypelab::synth::{emit_listing, synthesize_corpus};

use crate::config::PipelineConfig;
use crate::{
    invalid, BuildArgs, Cli, Command, EvalArgs, MineArgs, ModelArgs, PredictArgs, ReportArgs, SelectArgs, SynthArgs,
    TrainArgs, TuneArgs,
};

struct Ctx {
    cfg: PipelineConfig,
    timestamp: bool,
}

impl Ctx {
    fn reports(&self) -> &Path {
        &self.cfg.paths.reports
    }

    fn stamp(&self) -> String {
        if !self.timestamp {
            return String::new();
        }
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("# generated_at={secs}\n")
    }

    /// Write a file under the report directory, timestamp first.
    fn report(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.reports().join(name);
        write_file(&path, &format!("{}{body}", self.stamp()))?;
        Ok(path)
    }

    fn echo_config(&self, command: &str) -> Result<()> {
        self.report(&format!("{command}.config.toml"), &self.cfg.to_toml())?;
        Ok(())
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require(path, "dataset")?;
    Ok(read_csv(path)?)
}

fn load_listings(paths: &[PathBuf]) -> Result<Vec<FunctionListing>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for p in paths {
        require(p, "listing")?;
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let functions =
            parse_listing(&text, ParseOptions::default()).with_context(|| format!("parsing {}", p.display()))?;
        for f in functions {
            if !seen.insert(f.name.clone()) {
                return Err(invalid(format!(
                    "function `{}` appears in more than one listing",
                    f.name
                )));
            }
            out.push(f);
        }
    }
    Ok(out)
}

fn apply_model_args(cfg: &mut PipelineConfig, m: &ModelArgs) -> Result<()> {
    if let Some(d) = &m.dataset {
        cfg.paths.dataset = d.clone();
    }
    if let Some(a) = &m.algorithm {
        if *a != cfg.model.algorithm {
            cfg.model.hyperparameters.clear();
        }
        cfg.model.algorithm = a.clone();
    }
    for p in &m.params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| invalid(format!("--param expects key=value, got `{p}`")))?;
        cfg.model.hyperparameters.insert(k.trim().into(), v.trim().into());
    }
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require(p, "config")?;
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.report_dir {
        cfg.paths.reports = r;
    }
    let timestamp = !cli.no_timestamp;
    let mk = |cfg| Ctx { cfg, timestamp };
    match cli.command {
        Command::Synth(a) => cmd_synth(mk(cfg), a),
        Command::Build(a) => cmd_build(mk(cfg), a),
        Command::Select(a) => {
            apply_model_args(&mut cfg, &a.model)?;
            cmd_select(mk(cfg), a)
        }
        Command::Tune(a) => {
            apply_model_args(&mut cfg, &a.model)?;
            cmd_tune(mk(cfg), a)
        }
        Command::Train(a) => {
            apply_model_args(&mut cfg, &a.model)?;
            cmd_train(mk(cfg), a)
        }
        Command::Eval(a) => {
            apply_model_args(&mut cfg, &a.model)?;
            cmd_eval(mk(cfg), a)
        }
        Command::Mine(a) => cmd_mine(mk(cfg), a),
        Command::Predict(a) => cmd_predict(mk(cfg), a),
        Command::Report(a) => cmd_report(mk(cfg), a),
    }
}

fn cmd_synth(mut ctx: Ctx, a: SynthArgs) -> Result<()> {
    if let Some(o) = a.out {
        ctx.cfg.paths.corpus = o;
    }
    if let Some(c) = a.count {
        ctx.cfg.synth.insert("count".into(), toml::Value::Integer(c as i64));
    }
    if a.confusable {
        ctx.cfg
            .synth
            .insert("confusable_mode".into(), toml::Value::Boolean(true));
    }
    let mut synth = ctx.cfg.synth_config()?;
    if a.converge {
        let spec = ctx.cfg.model_spec()?;
        let trace = converge_dataset_size(
            &synth,
            &ctx.cfg.feature_config(),
            &spec,
            &SizeOptions::default(),
            ctx.cfg.seed,
        )?;
        ctx.report("size_convergence.csv", &trace.to_csv("functions"))?;
        let step = SizeOptions::default().step as f64;
        match trace.recommended(step) {
            Some(total) => {
                let per_type = (total / synth.counts.len() as f64).round().max(2.0) as usize;
                eprintln!("corpus size converged; using {per_type} functions per type");
                synth.counts = [per_type; 10];
                ctx.cfg
                    .synth
                    .insert("count".into(), toml::Value::Integer(per_type as i64));
            }
            None => eprintln!("warning: corpus size did not converge; keeping the configured counts"),
        }
    }
    ctx.echo_config("synth")?;
    let functions = synthesize_corpus(&synth)?;
    write_file(&ctx.cfg.paths.corpus, &emit_listing(&functions))?;
    eprintln!(
        "wrote {} functions to {}",
        functions.len(),
        ctx.cfg.paths.corpus.display()
    );
    Ok(())
}

fn cmd_build(mut ctx: Ctx, a: BuildArgs) -> Result<()> {
    if let Some(o) = a.out {
        ctx.cfg.paths.dataset = o;
    }
    if let Some(s) = a.scheme {
        ctx.cfg.scheme = s;
    }
    if a.ret_only {
        ctx.cfg.features.post = false;
        ctx.cfg.features.advanced = false;
    }
    if a.no_advanced {
        ctx.cfg.features.advanced = false;
    }
    let scheme = ctx.cfg.scheme()?;
    ctx.echo_config("build")?;
    let listings = if a.listings.is_empty() {
        vec![ctx.cfg.paths.corpus.clone()]
    } else {
        a.listings
    };
    let functions = load_listings(&listings)?;
    let (d, report) = build_dataset(&functions, &ctx.cfg.feature_config(), scheme);
    if d.is_empty() {
        return Err(invalid("no labeled function with a return site; nothing to build"));
    }
    write_csv(&d, &ctx.cfg.paths.dataset)?;
    let mut text = String::new();
    let _ = writeln!(text, "rows={}", d.len());
    let _ = writeln!(text, "features={}", d.n_features());
    let _ = writeln!(text, "vocabulary_fingerprint={}", d.vocabulary.fingerprint());
    let _ = writeln!(text, "pruned_features={}", report.pruned_features);
    let _ = writeln!(text, "truncated_patterns={}", report.truncated_patterns);
    let _ = writeln!(text, "unlabeled={}", report.unlabeled.join(" "));
    let _ = writeln!(text, "without_ret={}", report.without_ret.join(" "));
    for (i, c) in d.class_counts().iter().enumerate() {
        let _ = writeln!(text, "count.{}={c}", d.class_name(i));
    }
    for i in d.unstratifiable_classes() {
        eprintln!("warning: class {} has fewer than 2 rows", d.class_name(i));
    }
    ctx.report("build.txt", &text)?;
    eprintln!(
        "wrote {} rows x {} features to {}",
        d.len(),
        d.n_features(),
        ctx.cfg.paths.dataset.display()
    );
    Ok(())
}

fn names_of(d: &Dataset, cols: &[usize]) -> String {
    cols.iter().map(|&c| format!("{}\n", d.vocabulary.names()[c])).collect()
}

fn run_selection(ctx: &Ctx, d: &Dataset, spec: &ModelSpec) -> Result<Vec<usize>> {
    let methods = ctx.cfg.selection_methods()?;
    let report = select_features(d, spec, &methods, ctx.cfg.seed)?;
    ctx.report("selection.csv", &report.to_csv())?;
    for r in &report.results {
        ctx.report(&format!("selected_{}.txt", r.method), &names_of(d, &r.selected))?;
    }
    let winner = report.winner();
    eprintln!(
        "selection: {} keeps {} of {} features (cv accuracy {:.4})",
        winner.method,
        winner.selected.len(),
        d.n_features(),
        winner.cv_accuracy
    );
    Ok(winner.selected.clone())
}

fn run_tuning(ctx: &Ctx, d: &Dataset, spec: &ModelSpec) -> Result<ModelSpec> {
    let grid = if ctx.cfg.model.grid.is_empty() {
        GridSpec::default_for(spec.algorithm)
    } else {
        GridSpec::parse(&ctx.cfg.model.grid).map_err(invalid)?
    };
    let result = grid_search(d, spec.algorithm, &grid, ctx.cfg.seed)?;
    ctx.report("grid.csv", &result.to_csv())?;
    let mut best = result.best_spec(ctx.cfg.seed);
    for (k, v) in &spec.hyperparameters {
        best.hyperparameters.entry(k.clone()).or_insert_with(|| v.clone());
    }
    eprintln!("tuning: best {best}");
    Ok(best)
}

fn cmd_select(mut ctx: Ctx, a: SelectArgs) -> Result<()> {
    if !a.methods.is_empty() {
        ctx.cfg.selection.methods = a.methods;
    }
    if let Some(o) = a.out {
        ctx.cfg.paths.selection = o;
    }
    let spec = ctx.cfg.model_spec()?;
    ctx.echo_config("select")?;
    let d = load_dataset(&ctx.cfg.paths.dataset)?;
    let selected = run_selection(&ctx, &d, &spec)?;
    write_file(&ctx.cfg.paths.selection, &names_of(&d, &selected))?;
    Ok(())
}

fn cmd_tune(mut ctx: Ctx, a: TuneArgs) -> Result<()> {
    if let Some(g) = a.grid {
        ctx.cfg.model.grid = g;
    }
    let spec = ctx.cfg.model_spec()?;
    ctx.echo_config("tune")?;
    let d = load_dataset(&ctx.cfg.paths.dataset)?;
    let best = run_tuning(&ctx, &d, &spec)?;
    ctx.report("tuned_spec.txt", &format!("{best}\n"))?;
    Ok(())
}

fn cmd_train(mut ctx: Ctx, a: TrainArgs) -> Result<()> {
    ctx.cfg.model.select |= a.select;
    ctx.cfg.model.tune |= a.tune;
    if let Some(o) = a.out {
        ctx.cfg.paths.model = o;
    }
    let mut spec = ctx.cfg.model_spec()?;
    ctx.echo_config("train")?;
    let mut d = load_dataset(&ctx.cfg.paths.dataset)?;
    if ctx.cfg.model.select {
        let selected = run_selection(&ctx, &d, &spec)?;
        write_file(&ctx.cfg.paths.selection, &names_of(&d, &selected))?;
        d = d.select_columns(&selected)?;
    }
    if ctx.cfg.model.tune {
        spec = run_tuning(&ctx, &d, &spec)?;
    }
    let model = train(&spec, &d)?;
    save_model(&model, &ctx.cfg.paths.model)?;
    eprintln!(
        "trained {} on {} rows; model at {}",
        spec,
        d.len(),
        ctx.cfg.paths.model.display()
    );
    Ok(())
}

fn summary_reports(ctx: &Ctx, prefix: &str, model: &str, s: &MetricSummary) -> Result<()> {
    ctx.report(
        &format!("{prefix}_metrics.csv"),
        &format!("{}\n{}\n", MetricSummary::TABLE_HEADER, s.table_row(model)),
    )?;
    ctx.report(&format!("{prefix}_confusion.csv"), &s.pooled.confusion_csv())?;
    ctx.report(&format!("{prefix}_per_class.csv"), &s.pooled.per_class_csv())?;
    ctx.report(&format!("{prefix}_repetitions.csv"), &s.accuracy.to_csv("accuracy"))?;
    println!("{}", MetricSummary::TABLE_HEADER);
    println!("{}", s.table_row(model));
    Ok(())
}

fn program_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn cmd_eval(mut ctx: Ctx, a: EvalArgs) -> Result<()> {
    if let Some(m) = a.method {
        ctx.cfg.eval.method = m;
    }
    if let Some(r) = a.real {
        ctx.cfg.eval.real = Some(r);
    }
    if !a.programs.is_empty() {
        ctx.cfg.eval.programs = a.programs;
    }
    if let Some(r) = a.reps {
        ctx.cfg.eval.repetitions = r;
    }
    let spec = ctx.cfg.model_spec()?;
    let method = ctx.cfg.eval.method;
    if !(1..=3).contains(&method) {
        return Err(invalid(format!("evaluation method must be 1, 2 or 3, got {method}")));
    }
    if ctx.cfg.eval.repetitions == 0 {
        return Err(invalid("repetitions must be at least 1"));
    }
    if method == 3 && ctx.cfg.eval.programs.len() < 2 {
        return Err(invalid(format!(
            "method 3 needs at least two --program datasets, got {}",
            ctx.cfg.eval.programs.len()
        )));
    }
    if method == 2 && ctx.cfg.eval.real.is_none() {
        return Err(invalid("method 2 needs a --real dataset"));
    }
    ctx.echo_config("eval")?;
    let model_name = spec.algorithm.name();
    let seed = ctx.cfg.seed;
    let real = ctx.cfg.eval.real.as_deref().map(load_dataset).transpose()?;
    match method {
        1 => {
            let synth = load_dataset(&ctx.cfg.paths.dataset)?;
            let s = evaluate_method1(real.as_ref(), &synth, &spec, ctx.cfg.eval.repetitions, seed)?;
            summary_reports(&ctx, "method1", model_name, &s)?;
        }
        2 => {
            let synth = load_dataset(&ctx.cfg.paths.dataset)?;
            let opts = Method2Options {
                reps: ctx.cfg.eval.repetitions,
                ..Method2Options::default()
            };
            let r = evaluate_method2(real.as_ref().expect("checked above"), &synth, &spec, &opts, seed)?;
            ctx.report("method2_real_fraction.csv", &r.trace.to_csv("real_percent"))?;
            if !r.converged {
                eprintln!("warning: real-fraction loop did not converge; reporting at 100%");
            }
            summary_reports(&ctx, "method2", model_name, &r.at_stop)?;
        }
        _ => {
            let programs: Vec<(String, Dataset)> = ctx
                .cfg
                .eval
                .programs
                .iter()
                .map(|p| Ok((program_name(p), load_dataset(p)?)))
                .collect::<Result<_>>()?;
            let synth = if a.with_synthetic {
                Some(load_dataset(&ctx.cfg.paths.dataset)?)
            } else {
                None
            };
            let r = evaluate_method3(&programs, synth.as_ref(), &spec, seed)?;
            let mut csv = String::from("program,train_rows,test_rows,accuracy,macro_f1,shared_symbols\n");
            for run in &r.runs {
                let _ = writeln!(
                    csv,
                    "{},{},{},{:.6},{:.6},{}",
                    run.program,
                    run.train_rows,
                    run.test_rows,
                    run.metrics.accuracy,
                    run.metrics.macro_f1,
                    run.shared_symbols.len()
                );
                if !run.shared_symbols.is_empty() {
                    eprintln!(
                        "warning: {} shares {} symbols with its training set",
                        run.program,
                        run.shared_symbols.len()
                    );
                }
            }
            ctx.report("method3_programs.csv", &csv)?;
            summary_reports(&ctx, "method3", model_name, &r.summary)?;
        }
    }
    Ok(())
}

fn cmd_mine(mut ctx: Ctx, a: MineArgs) -> Result<()> {
    if let Some(d) = a.dataset {
        ctx.cfg.paths.dataset = d;
    }
    if !a.selections.is_empty() {
        ctx.cfg.mine.selections = a.selections;
    }
    if let Some(v) = a.min_support {
        ctx.cfg.mine.min_support = v;
    }
    if let Some(v) = a.max_antecedents {
        ctx.cfg.mine.max_antecedents = v;
    }
    if let Some(v) = a.min_confidence {
        ctx.cfg.mine.min_confidence = v;
    }
    if let Some(o) = a.out {
        ctx.cfg.paths.rules = o;
    }
    ctx.echo_config("mine")?;
    let mut d = load_dataset(&ctx.cfg.paths.dataset)?;
    if !ctx.cfg.mine.selections.is_empty() {
        let mut sets = Vec::new();
        for p in &ctx.cfg.mine.selections {
            require(p, "selection")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cols = text
                .lines()
                .filter(|l| !l.is_empty() && !l.starts_with("# generated_at="))
                .map(|n| {
                    d.vocabulary
                        .get(n)
                        .ok_or_else(|| invalid(format!("{}: feature `{n}` is not in the dataset", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(cols);
        }
        let pre = preselect_columns(&sets);
        if let Some(w) = &pre.warning {
            eprintln!("warning: {w}");
        }
        d = d.select_columns(&pre.columns)?;
    }
    let rules = mine_rules(&d, &ctx.cfg.mine_params())?;
    let provenance = format!(
        "{}dataset {} ({} rows, {} features), seed {}, min_support {}, max_antecedents {}, min_confidence {}",
        ctx.stamp(),
        Fingerprint::of(&d).hash,
        d.len(),
        d.n_features(),
        ctx.cfg.seed,
        ctx.cfg.mine.min_support,
        ctx.cfg.mine.max_antecedents,
        ctx.cfg.mine.min_confidence
    );
    write_file(&ctx.cfg.paths.rules, &render_rule_cards(&rules, &provenance))?;
    eprintln!("wrote {} rules to {}", rules.len(), ctx.cfg.paths.rules.display());
    Ok(())
}

fn cmd_predict(mut ctx: Ctx, a: PredictArgs) -> Result<()> {
    if let Some(m) = a.model {
        ctx.cfg.paths.model = m;
    }
    ctx.echo_config("predict")?;
    require(&ctx.cfg.paths.model, "model")?;
    let model: TrainedModel = load_model(&ctx.cfg.paths.model)?;
    let functions = load_listings(std::slice::from_ref(&a.listing))?;
    let vocabulary = FeatureVocabulary::from_names(model.vocabulary.clone())?;
    let rows = featurize(&functions, &ctx.cfg.feature_config(), &vocabulary);
    let mut csv = String::from("function,predicted");
    for c in &model.classes {
        let _ = write!(csv, ",{c}");
    }
    csv.push('\n');
    for r in &rows {
        let scores = match model.predict_proba(&r.bits)? {
            Some(p) => p,
            None => model.scores(&r.bits)?,
        };
        let pred = model.predict(&r.bits)?;
        let _ = write!(csv, "{},{}", r.name, model.classes[pred]);
        for s in scores {
            let _ = write!(csv, ",{s:.6}");
        }
        csv.push('\n');
    }
    print!("{csv}");
    ctx.report("predictions.csv", &csv)?;
    Ok(())
}

fn cmd_report(mut ctx: Ctx, a: ReportArgs) -> Result<()> {
    if let Some(d) = a.dataset {
        ctx.cfg.paths.dataset = d;
    }
    if let Some(m) = a.model {
        ctx.cfg.paths.model = m;
    }
    ctx.echo_config("report")?;
    let d = load_dataset(&ctx.cfg.paths.dataset)?;
    let mut text = String::new();
    let _ = writeln!(text, "dataset={}", ctx.cfg.paths.dataset.display());
    let _ = writeln!(text, "scheme={}", d.scheme);
    let _ = writeln!(text, "rows={}", d.len());
    let _ = writeln!(text, "features={}", d.n_features());
    let _ = writeln!(text, "fingerprint={}", Fingerprint::of(&d).hash);
    for (i, c) in d.class_counts().iter().enumerate() {
        let _ = writeln!(text, "count.{}={c}", d.class_name(i));
    }
    if ctx.cfg.paths.model.is_file() {
        let m = load_model(&ctx.cfg.paths.model)?;
        let _ = writeln!(text, "model={}", m.spec);
        let _ = writeln!(text, "model_fingerprint={}", m.fingerprint.hash);
        let _ = writeln!(text, "model_matches_dataset={}", m.check_dataset(&d).is_ok());
        if let Ok(imp) = m.feature_importances() {
            let mut order: Vec<usize> = (0..imp.len()).collect();
            order.sort_by(|&x, &y| imp[y].total_cmp(&imp[x]).then(x.cmp(&y)));
            for &j in order.iter().take(10).filter(|&&j| imp[j] > 0.0) {
                let _ = writeln!(text, "importance {:.6} {}", imp[j], m.vocabulary[j]);
            }
        }
    }
    ctx.report("summary.txt", &text)?;
    let mut csv = String::from("tool,accuracy,precision,recall,f1\n");
    for b in decompiler_baselines(d.scheme) {
        let _ = writeln!(csv, "{},{},{},{},{}", b.name, b.accuracy, b.precision, b.recall, b.f1);
    }
    ctx.report("baselines.csv", &csv)?;
    print!("{text}");
    Ok(())
}
