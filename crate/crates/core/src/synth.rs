//! Seeded synthetic corpora of labeled functions built from cdecl codegen
//! templates, plus one unlabeled driver per function that calls it.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;

use crate::asm::{parse_instruction, render_instruction, render_listing, FunctionListing, Instruction, ParseOptions};
use crate::error::SynthError;
use crate::generalize::match_callee_epilogue;
use crate::label::TypeLabel;
use crate::seed::{self, stream, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Functions per type, indexed by canonical class order.
    pub counts: [usize; 10],
    pub callers_per_function: usize,
    /// Probability that a void function computes a temporary in eax.
    pub distractor_probability: f64,
    pub confusable_mode: bool,
    /// Weights of the three callee epilogues: full (callee-saved pops,
    /// `mov esp, ebp`, `pop ebp`), frame (`mov esp, ebp`, `pop ebp`), and
    /// `pop ebp` alone.
    pub epilogue_variant_weights: [f64; 3],
    pub rng_seed: u64,
    /// Namespaces generated symbols, so several corpora can be merged.
    pub symbol_prefix: String,
    /// Upper bound of the uniform number of filler instructions placed before
    /// each template.
    pub max_fillers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            counts: [100; 10],
            callers_per_function: 2,
            distractor_probability: 0.3,
            confusable_mode: false,
            epilogue_variant_weights: [0.2, 0.4, 0.4],
            rng_seed: 0,
            symbol_prefix: String::new(),
            max_fillers: 3,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> SynthError {
    SynthError::Config(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SynthError> {
    value
        .trim()
        .parse()
        .map_err(|_| cfg_err(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, SynthError> {
    match value.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(cfg_err(format!("`{key}`: expected a boolean, found `{other}`"))),
    }
}

impl SynthConfig {
    /// Same count for every type.
    pub fn uniform(count: usize, seed: u64) -> Self {
        SynthConfig {
            counts: [count; 10],
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn count(&self, label: TypeLabel) -> usize {
        self.counts[label.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Apply one `key=value` setting. Keys: `count` (all types),
    /// `count.<type>`, `callers_per_function`, `distractor_probability`,
    /// `confusable_mode`, `epilogue_variant_weights` (three comma-separated
    /// numbers), `seed`, `symbol_prefix`, `max_fillers`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        match key {
            "count" => self.counts = [parse_num(key, value)?; 10],
            "callers_per_function" => self.callers_per_function = parse_num(key, value)?,
            "distractor_probability" => self.distractor_probability = parse_num(key, value)?,
            "confusable_mode" => self.confusable_mode = parse_bool(key, value)?,
            "epilogue_variant_weights" => {
                let parts: Vec<f64> = value.split(',').map(|p| parse_num(key, p)).collect::<Result<_, _>>()?;
                self.epilogue_variant_weights = parts
                    .try_into()
                    .map_err(|_| cfg_err("`epilogue_variant_weights` needs three values"))?;
            }
            "seed" => self.rng_seed = parse_num(key, value)?,
            "symbol_prefix" => self.symbol_prefix = value.trim().to_string(),
            "max_fillers" => self.max_fillers = parse_num(key, value)?,
            _ => {
                if let Some(ty) = key.strip_prefix("count.") {
                    let label: TypeLabel = ty
                        .parse()
                        .map_err(|e: crate::error::LabelError| cfg_err(e.to_string()))?;
                    self.counts[label.index()] = parse_num(key, value)?;
                } else {
                    return Err(cfg_err(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Parse `key=value` lines; blank lines and `#` comments are ignored.
    pub fn from_kv(text: &str) -> Result<Self, SynthError> {
        let mut cfg = SynthConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("expected key=value, found `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for t in TypeLabel::ALL {
            let _ = writeln!(out, "count.{}={}", t.name(), self.count(t));
        }
        let w = self.epilogue_variant_weights;
        let _ = writeln!(out, "callers_per_function={}", self.callers_per_function);
        let _ = writeln!(out, "distractor_probability={}", self.distractor_probability);
        let _ = writeln!(out, "confusable_mode={}", self.confusable_mode);
        let _ = writeln!(out, "epilogue_variant_weights={},{},{}", w[0], w[1], w[2]);
        let _ = writeln!(out, "seed={}", self.rng_seed);
        let _ = writeln!(out, "symbol_prefix={}", self.symbol_prefix);
        let _ = writeln!(out, "max_fillers={}", self.max_fillers);
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.distractor_probability) {
            return Err(cfg_err("distractor_probability must lie in [0, 1]"));
        }
        let w = self.epilogue_variant_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(cfg_err("epilogue weights must be nonnegative"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(cfg_err("epilogue weights must sum to 1"));
        }
        if !self
            .symbol_prefix
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            return Err(cfg_err("symbol_prefix may only contain letters, digits and `_`"));
        }
        Ok(())
    }
}

/// Templates of one type. Text lines carry `{NAME}` slots filled per
/// instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogEntry {
    pub ret: Vec<Vec<&'static str>>,
    /// Templates shared with another type in confusable mode.
    pub shared: Vec<Vec<&'static str>>,
    /// Probability of drawing from `shared` instead of `ret`.
    pub shared_probability: f64,
    pub post: Vec<&'static str>,
}

impl CatalogEntry {
    /// Every (RET, POST) template pair of the entry.
    pub fn pairs(&self) -> Vec<(&[&'static str], &'static str)> {
        let rets: Vec<&[&'static str]> = if self.shared_probability >= 1.0 {
            self.shared.iter().map(|v| v.as_slice()).collect()
        } else {
            self.ret.iter().chain(&self.shared).map(|v| v.as_slice()).collect()
        };
        rets.iter()
            .flat_map(|r| self.post.iter().map(move |p| (*r, *p)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateCatalog {
    pub confusable: bool,
    entries: Vec<CatalogEntry>,
}

const BOOL_CHAR_SHARED: &[&[&str]] = &[&["mov al, {LIT}"], &["mov al, byte ptr [ebp+{V}]"]];
const INT_POINTER_SHARED: &[&[&str]] = &[&["mov eax, [ebp+{V}]"], &["mov eax, [ebp+{V}]", "add eax, {L}"]];
const INT_POINTER_SHARED_PROBABILITY: f64 = 0.7;

fn own_ret(label: TypeLabel) -> Vec<Vec<&'static str>> {
    let t: &[&[&str]] = match label {
        TypeLabel::Bool => &[&["mov al, {L01}"], &["cmp dword ptr [ebp+{V}], {L}", "{SETCC} al"]],
        TypeLabel::Char => &[
            &["mov al, byte ptr [ebp+{V}]"],
            &["mov ecx, [ebp+{A}]", "mov al, byte ptr [ecx+{OFF}]"],
        ],
        TypeLabel::Short => &[&["mov ax, {LSH}"], &["mov ax, word ptr [ebp+{V}]"]],
        TypeLabel::Int => &[
            &["mov eax, {LINT}"],
            &["mov eax, [ebp+{V}]", "cdq", "idiv dword ptr [ebp+{V2}]"],
            &["mov eax, [ebp+{V}]", "add eax, [ebp+{V2}]"],
            &[
                "mov ecx, [ebp+{V}]",
                "cmp ecx, [ebp+{V2}]",
                "{JCC} {LBL1}",
                "mov dword ptr [ebp+{V3}], 1",
                "jmp {LBL2}",
                "{LBL1}: mov dword ptr [ebp+{V3}], 0",
                "{LBL2}: mov eax, [ebp+{V3}]",
            ],
        ],
        TypeLabel::LongLong => &[
            &["mov eax, {LINT}", "mov edx, {LINT2}"],
            &["mov eax, [ebp+{V}]", "mov edx, [ebp+{V2}]"],
        ],
        TypeLabel::Float => &[
            &["fld dword ptr [ebp+{V}] ; !bytes D9 45 {B}"],
            &[
                "fld dword ptr [ebp+{V}] ; !bytes D9 45 {B}",
                "fmul dword ptr [ebp+{V2}] ; !bytes D8 4D {B2}",
                "fstp dword ptr [ebp+{V3}] ; !bytes D9 5D {B3}",
                "fld dword ptr [ebp+{V3}] ; !bytes D9 45 {B3}",
            ],
        ],
        TypeLabel::Double => &[
            &["fld qword ptr [ebp+{V}] ; !bytes DD 45 {B}"],
            &[
                "fld qword ptr [ebp+{V}] ; !bytes DD 45 {B}",
                "fmul qword ptr [ebp+{V2}] ; !bytes DC 4D {B2}",
                "fstp qword ptr [ebp+{V3}] ; !bytes DD 5D {B3}",
                "fld qword ptr [ebp+{V3}] ; !bytes DD 45 {B3}",
            ],
        ],
        TypeLabel::Pointer => &[
            &["mov ecx, [ebp+{A}]", "lea eax, [ecx+{OFF}]"],
            &["mov eax, offset {SG}"],
        ],
        TypeLabel::Struct => &[
            &[
                "mov ecx, [ebp+arg_0]",
                "mov dword ptr [ecx], {L}",
                "mov dword ptr [ecx+4], {L2}",
                "mov eax, [ebp+arg_0]",
            ],
            &[
                "mov eax, [ebp+arg_0]",
                "mov ecx, [ebp+{V}]",
                "mov [eax], ecx",
                "mov eax, [ebp+arg_0]",
            ],
        ],
        TypeLabel::Void => &[
            &["mov dword ptr [ebp+{V}], {L}"],
            &["mov ecx, [ebp+{V}]", "add ecx, {L}", "mov [ebp+{V}], ecx"],
        ],
    };
    t.iter().map(|v| v.to_vec()).collect()
}

/// Void body that leaves a temporary in eax.
const VOID_TEMPORARY: &[&str] = &["mov eax, {L}", "mov [ebp+{V}], eax"];

fn post_templates(label: TypeLabel) -> Vec<&'static str> {
    match label {
        TypeLabel::Bool => vec!["movzx edx, al", "movzx ecx, al"],
        TypeLabel::Char => vec!["movsx edx, al", "movsx ecx, al"],
        TypeLabel::Short => vec!["cwde"],
        TypeLabel::Int => vec!["add eax, {L}", "cmp eax, {L}", "mov [ebp+{V}], eax"],
        TypeLabel::LongLong => vec!["mov [ebp+{V}], eax"],
        TypeLabel::Float => vec!["fstp dword ptr [ebp+{V}] ; !bytes D9 5D {B}"],
        TypeLabel::Double => vec!["fstp qword ptr [ebp+{V}] ; !bytes DD 5D {B}"],
        TypeLabel::Pointer => vec!["test eax, eax", "mov ecx, [eax]"],
        TypeLabel::Struct => vec!["mov ecx, [eax]"],
        TypeLabel::Void => vec!["mov dword ptr [ebp+{V}], {L}", "xor ecx, ecx"],
    }
}

impl TemplateCatalog {
    pub fn new(confusable: bool) -> Self {
        let entries = TypeLabel::ALL
            .iter()
            .map(|&t| {
                let mut e = CatalogEntry {
                    ret: own_ret(t),
                    shared: Vec::new(),
                    shared_probability: 0.0,
                    post: post_templates(t),
                };
                if t == TypeLabel::Void {
                    e.ret.push(VOID_TEMPORARY.to_vec());
                }
                if confusable {
                    match t {
                        TypeLabel::Bool | TypeLabel::Char => {
                            e.shared = BOOL_CHAR_SHARED.iter().map(|v| v.to_vec()).collect();
                            e.shared_probability = 1.0;
                        }
                        TypeLabel::Int | TypeLabel::Pointer => {
                            e.shared = INT_POINTER_SHARED.iter().map(|v| v.to_vec()).collect();
                            e.shared_probability = INT_POINTER_SHARED_PROBABILITY;
                        }
                        _ => {}
                    }
                }
                e
            })
            .collect();
        TemplateCatalog { confusable, entries }
    }

    pub fn entry(&self, label: TypeLabel) -> &CatalogEntry {
        &self.entries[label.index()]
    }
}

/// A rendered template: RET suffix and one call-site instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateInstance {
    pub ret: Vec<Instruction>,
    pub post: Instruction,
}

const TEMPLATE_VARS: std::ops::RangeInclusive<u32> = 1..=11; // var_4 .. var_2C
const FILLER_VARS: std::ops::RangeInclusive<u32> = 12..=23; // var_30 .. var_5C

fn var_name(slot: u32) -> (String, String) {
    let off = slot * 4;
    (format!("var_{off:X}"), format!("{:02X}", 256 - off))
}

fn char_literal(rng: &mut Rng) -> i64 {
    // Printable ASCII plus the two literals shared with bool.
    let n = rng.gen_range(0..97);
    if n < 95 {
        32 + n
    } else {
        n - 95
    }
}

struct Filler<'a> {
    rng: &'a mut Rng,
    values: HashMap<String, String>,
    vars_used: Vec<u32>,
}

impl Filler<'_> {
    fn fresh_var(&mut self) -> u32 {
        loop {
            let v = self.rng.gen_range(TEMPLATE_VARS);
            if !self.vars_used.contains(&v) {
                self.vars_used.push(v);
                return v;
            }
        }
    }

    fn value(&mut self, slot: &str) -> String {
        if let Some(v) = self.values.get(slot) {
            return v.clone();
        }
        let rng = &mut *self.rng;
        let v = match slot {
            "V" | "V2" | "V3" => {
                let var = self.fresh_var();
                let (name, byte) = var_name(var);
                let suffix = &slot[1..];
                self.values.insert(format!("B{suffix}"), byte);
                name
            }
            "B" | "B2" | "B3" => {
                let var_slot = format!("V{}", &slot[1..]);
                self.value(&var_slot);
                return self.values[slot].clone();
            }
            "A" => format!("arg_{:X}", 4 * rng.gen_range(0..3)),
            "L01" => rng.gen_range(0..2).to_string(),
            // One pool for every type sharing the template, so the literal
            // carries no class signal.
            "LIT" => char_literal(rng).to_string(),
            "LSH" => rng.gen_range(i16::MIN..=i16::MAX).to_string(),
            "LINT" | "LINT2" => rng.gen::<i32>().to_string(),
            "L" | "L2" => rng.gen_range(2..100).to_string(),
            "OFF" => (4 * rng.gen_range(1..16)).to_string(),
            "SG" => format!("$SG{}", rng.gen_range(10000..100000)),
            "SETCC" => ["sete", "setne", "setg", "setl"][rng.gen_range(0..4)].to_string(),
            "JCC" => ["jle", "jge", "jne", "je", "ja", "jb"][rng.gen_range(0..6)].to_string(),
            "LBL1" => {
                let n = rng.gen_range(1..500) * 2;
                self.values.insert("LBL2".into(), format!("$LN{}", n + 1));
                format!("$LN{n}")
            }
            "LBL2" => {
                self.value("LBL1");
                return self.values["LBL2"].clone();
            }
            other => panic!("unknown template slot `{other}`"),
        };
        self.values.insert(slot.to_string(), v.clone());
        v
    }

    fn render(&mut self, line: &str) -> String {
        let mut out = String::new();
        let mut rest = line;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..].find('}').expect("unterminated slot") + open;
            let slot = &rest[open + 1..close];
            out.push_str(&self.value(slot));
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        out
    }

    fn instruction(&mut self, line: &str) -> Instruction {
        let text = self.render(line);
        parse_instruction(&text, ParseOptions { strict_mnemonics: true })
            .unwrap_or_else(|e| panic!("template line `{line}` rendered out of grammar: {e}"))
    }
}

fn pick_ret<'a>(entry: &'a CatalogEntry, label: TypeLabel, distractor_p: f64, rng: &mut Rng) -> &'a [&'static str] {
    if !entry.shared.is_empty() && rng.gen_bool(entry.shared_probability) {
        return &entry.shared[rng.gen_range(0..entry.shared.len())];
    }
    if label == TypeLabel::Void {
        // The eax-temporary body is the last entry and is governed by its own
        // probability.
        let n = entry.ret.len() - 1;
        if rng.gen_bool(distractor_p) {
            return &entry.ret[n];
        }
        return &entry.ret[rng.gen_range(0..n)];
    }
    &entry.ret[rng.gen_range(0..entry.ret.len())]
}

/// Draw one template instance for a type.
pub fn template_for(catalog: &TemplateCatalog, label: TypeLabel, distractor_p: f64, rng: &mut Rng) -> TemplateInstance {
    let entry = catalog.entry(label);
    let ret_lines = pick_ret(entry, label, distractor_p, rng);
    let post_line = entry.post[rng.gen_range(0..entry.post.len())];
    let mut f = Filler {
        rng,
        values: HashMap::new(),
        vars_used: Vec::new(),
    };
    let ret = ret_lines.iter().map(|l| f.instruction(l)).collect();
    let mut f = Filler {
        rng: f.rng,
        values: HashMap::new(),
        vars_used: Vec::new(),
    };
    let post = f.instruction(post_line);
    TemplateInstance { ret, post }
}

fn parse_fixed(line: &str) -> Instruction {
    parse_instruction(line, ParseOptions { strict_mnemonics: true }).expect("fixed line in grammar")
}

fn filler(rng: &mut Rng) -> Instruction {
    let slot = rng.gen_range(FILLER_VARS);
    let (v, _) = var_name(slot);
    let l = rng.gen_range(2..100);
    let text = match rng.gen_range(0..6) {
        0 => format!("mov ecx, [ebp+{v}]"),
        1 => format!("mov [ebp+{v}], ecx"),
        2 => format!("add ecx, {l}"),
        3 => "xor ecx, ecx".to_string(),
        4 => format!("mov dword ptr [ebp+{v}], {l}"),
        _ => format!("shl ecx, {}", l % 4 + 1),
    };
    parse_fixed(&text)
}

fn pick_epilogue(weights: &[f64; 3], rng: &mut Rng) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(2)
}

fn callee_name(prefix: &str, index: usize) -> String {
    format!("_{prefix}sub_{:X}", 0x401000 + 0x40 * index)
}

fn driver_name(prefix: &str, index: usize) -> String {
    format!("_{prefix}drv_{:X}", 0x501000 + 0x40 * index)
}

struct Generated {
    callee: FunctionListing,
    driver: Option<FunctionListing>,
}

fn generate_one(cfg: &SynthConfig, catalog: &TemplateCatalog, label: TypeLabel, index: usize) -> Generated {
    let mut rng = seed::rng(cfg.rng_seed, stream::SYNTH_FUNCTION, index as u64);
    let name = callee_name(&cfg.symbol_prefix, index);
    let inst = template_for(catalog, label, cfg.distractor_probability, &mut rng);
    let epilogue = pick_epilogue(&cfg.epilogue_variant_weights, &mut rng);

    let mut body = vec![
        parse_fixed("push ebp"),
        parse_fixed("mov ebp, esp"),
        parse_fixed(&format!("sub esp, {}", 16 * rng.gen_range(6..12))),
    ];
    if epilogue == 0 {
        body.push(parse_fixed("push edi"));
        body.push(parse_fixed("push esi"));
    }
    let fillers = rng.gen_range(0..=cfg.max_fillers);
    for _ in 0..fillers {
        body.push(filler(&mut rng));
    }
    body.extend(inst.ret);
    let tail: &[&str] = match epilogue {
        0 => &["pop esi", "pop edi", "mov esp, ebp", "pop ebp", "retn"],
        1 => &["mov esp, ebp", "pop ebp", "retn"],
        _ => &["pop ebp", "retn"],
    };
    body.extend(tail.iter().map(|l| parse_fixed(l)));
    let callee = FunctionListing::new(name.clone(), body).labeled(label);

    let driver = (cfg.callers_per_function > 0).then(|| {
        let mut d = vec![
            parse_fixed("push ebp"),
            parse_fixed("mov ebp, esp"),
            parse_fixed("sub esp, 128"),
        ];
        let catalog_entry = catalog.entry(label);
        for _ in 0..cfg.callers_per_function {
            let argc = rng.gen_range(0..3usize);
            for _ in 0..argc {
                d.push(parse_fixed(&format!("push {}", rng.gen_range(0..64))));
            }
            let mut pushed = argc;
            if label == TypeLabel::Struct {
                let (v, _) = var_name(rng.gen_range(FILLER_VARS));
                d.push(parse_fixed(&format!("lea eax, [ebp+{v}]")));
                d.push(parse_fixed("push eax"));
                pushed += 1;
            }
            d.push(parse_fixed(&format!("call {name}")));
            if pushed > 0 {
                d.push(parse_fixed(&format!("add esp, {}", 4 * pushed)));
            }
            let post_line = catalog_entry.post[rng.gen_range(0..catalog_entry.post.len())];
            let mut f = Filler {
                rng: &mut rng,
                values: HashMap::new(),
                vars_used: Vec::new(),
            };
            d.push(f.instruction(post_line));
        }
        d.extend(["mov esp, ebp", "pop ebp", "retn"].iter().map(|l| parse_fixed(l)));
        FunctionListing::new(driver_name(&cfg.symbol_prefix, index), d)
    });
    Generated { callee, driver }
}

/// Labeled functions in canonical type order, followed by their drivers.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<Vec<FunctionListing>, SynthError> {
    cfg.validate()?;
    let catalog = TemplateCatalog::new(cfg.confusable_mode);
    let jobs: Vec<(TypeLabel, usize)> = TypeLabel::ALL
        .iter()
        .flat_map(|&t| std::iter::repeat_n(t, cfg.count(t)))
        .enumerate()
        .map(|(i, t)| (t, i))
        .collect();
    let generated: Vec<Generated> = jobs
        .par_iter()
        .map(|&(t, i)| generate_one(cfg, &catalog, t, i))
        .collect();
    let mut functions = Vec::with_capacity(generated.len() * 2);
    let mut drivers = Vec::new();
    for g in generated {
        functions.push(g.callee);
        drivers.extend(g.driver);
    }
    functions.extend(drivers);
    Ok(functions)
}

/// Render a corpus as a listing document.
pub fn emit_listing(functions: &[FunctionListing]) -> String {
    render_listing(functions)
}

/// Match a rendered line against a template line; each `{SLOT}` matches one
/// non-empty token.
fn line_matches(template: &str, text: &str) -> bool {
    fn go(t: &str, s: &str) -> bool {
        match t.find('{') {
            None => t == s,
            Some(open) => {
                if !s.starts_with(&t[..open]) {
                    return false;
                }
                let close = t[open..].find('}').map(|c| c + open).unwrap_or(t.len());
                let rest_t = &t[(close + 1).min(t.len())..];
                let s = &s[open..];
                let max = s
                    .find(|c: char| !(c.is_ascii_alphanumeric() || "_$@?.-".contains(c)))
                    .unwrap_or(s.len());
                (1..=max).any(|k| go(rest_t, &s[k..]))
            }
        }
    }
    go(template, text)
}

/// Whether a function body before its epilogue ends with one of the type's
/// RET templates.
pub fn matches_ret_template(catalog: &TemplateCatalog, label: TypeLabel, func: &FunctionListing) -> bool {
    let Some(ret) = func.return_indices().last().copied() else {
        return false;
    };
    let start = match_callee_epilogue(&func.instructions[..=ret]).unwrap_or(ret);
    let body = &func.instructions[..start];
    let entry = catalog.entry(label);
    entry.ret.iter().chain(&entry.shared).any(|tpl| {
        tpl.len() <= body.len()
            && tpl
                .iter()
                .zip(&body[body.len() - tpl.len()..])
                .all(|(t, ins)| line_matches(t, &render_instruction(ins)))
    })
}

pub fn matches_post_template(catalog: &TemplateCatalog, label: TypeLabel, ins: &Instruction) -> bool {
    let text = render_instruction(ins);
    catalog.entry(label).post.iter().any(|t| line_matches(t, &text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_listing, ParseOptions};

    #[test]
    fn kv_round_trip() {
        let mut cfg = SynthConfig::uniform(7, 42);
        cfg.confusable_mode = true;
        cfg.counts[TypeLabel::Void.index()] = 3;
        cfg.symbol_prefix = "p1_".into();
        let back = SynthConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!(SynthConfig::from_kv("epilogue_variant_weights=0.5,0.5,0.5").is_err());
        assert!(SynthConfig::from_kv("colour=blue").is_err());
        assert!(SynthConfig::from_kv("distractor_probability=1.5").is_err());
    }

    #[test]
    fn every_template_renders_in_grammar() {
        for confusable in [false, true] {
            let catalog = TemplateCatalog::new(confusable);
            for t in TypeLabel::ALL {
                assert!(!catalog.entry(t).pairs().is_empty());
                let mut rng = seed::rng_from(9);
                for _ in 0..50 {
                    let inst = template_for(&catalog, t, 0.5, &mut rng);
                    assert!(!inst.ret.is_empty());
                    assert!(matches_post_template(&catalog, t, &inst.post));
                }
            }
        }
    }

    #[test]
    fn corpus_shape() {
        let cfg = SynthConfig::uniform(3, 1);
        let fs = synthesize_corpus(&cfg).unwrap();
        assert_eq!(fs.len(), 60);
        let labeled: Vec<_> = fs.iter().filter(|f| f.true_return_type.is_some()).collect();
        assert_eq!(labeled.len(), 30);
        for t in TypeLabel::ALL {
            assert_eq!(labeled.iter().filter(|f| f.true_return_type == Some(t)).count(), 3);
        }
        let doc = emit_listing(&fs);
        assert_eq!(parse_listing(&doc, ParseOptions::default()).unwrap(), fs);
    }

    #[test]
    fn line_matcher() {
        assert!(line_matches("mov al, {L01}", "mov al, 1"));
        assert!(line_matches(
            "{LBL2}: mov eax, [ebp+{V3}]",
            "$LN5: mov eax, [ebp+var_C]"
        ));
        assert!(!line_matches("mov al, {L01}", "mov ax, 1"));
        assert!(line_matches(
            "fld dword ptr [ebp+{V}] ; !bytes D9 45 {B}",
            "fld dword ptr [ebp+var_8] ; !bytes D9 45 F8"
        ));
    }

    #[test]
    fn deterministic_and_faithful() {
        for confusable in [false, true] {
            let mut cfg = SynthConfig::uniform(20, 5);
            cfg.confusable_mode = confusable;
            let a = synthesize_corpus(&cfg).unwrap();
            assert_eq!(a, synthesize_corpus(&cfg).unwrap());
            let catalog = TemplateCatalog::new(confusable);
            for f in a.iter().filter(|f| f.true_return_type.is_some()) {
                let t = f.true_return_type.unwrap();
                assert!(
                    matches_ret_template(&catalog, t, f),
                    "{}",
                    render_listing(std::slice::from_ref(f))
                );
            }
            let labels: HashMap<&str, TypeLabel> = a
                .iter()
                .filter_map(|f| f.true_return_type.map(|t| (f.name.as_str(), t)))
                .collect();
            for c in crate::extract::extract_post_call_chunks(&a) {
                let next = c.next_instruction.as_ref().unwrap();
                assert!(matches_post_template(&catalog, labels[c.callee.as_str()], next));
            }
        }
    }
}
