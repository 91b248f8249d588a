use std::collections::HashSet;

use super::{
    arity, is_conditional_jump, Disp, FunctionListing, Instruction, MemRef, Operand, OperandKind, PtrSize, Register,
};
use crate::error::ListingError;
use crate::label::TypeLabel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject mnemonics missing from the arity table instead of passing them
    /// through as opaque instructions.
    pub strict_mnemonics: bool,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ListingError {
    ListingError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn is_sym_start(c: char) -> bool {
    c.is_ascii_alphabetic() || matches!(c, '_' | '$' | '@' | '?' | '.')
}

fn is_sym_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '$' | '@' | '?' | '.')
}

pub(crate) fn is_symbol(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_sym_start(c)) && chars.all(is_sym_char)
}

pub(crate) fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    if body.is_empty() || !body.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let magnitude: u64 = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else if let Some(hex) = body.strip_suffix('h').or_else(|| body.strip_suffix('H')) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse().ok()?
    };
    if neg {
        if magnitude <= i64::MAX as u64 + 1 {
            Some((magnitude as i64).wrapping_neg())
        } else {
            None
        }
    } else {
        i64::try_from(magnitude).ok()
    }
}

struct LineCtx {
    line: usize,
}

impl LineCtx {
    fn err(&self, column: usize, message: impl Into<String>) -> ListingError {
        syntax(self.line, column, message)
    }
}

fn parse_mem(ctx: &LineCtx, text: &str, col: usize) -> Result<MemRef, ListingError> {
    let mut mem = MemRef {
        base: None,
        index: None,
        disp: None,
    };
    // Split into signed terms.
    let mut terms: Vec<(bool, &str, usize)> = Vec::new();
    let mut start = 0;
    let mut negative = false;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'+' || b == b'-' {
            let term = text[start..i].trim();
            if !term.is_empty() {
                terms.push((negative, term, col + start));
            } else if i > 0 {
                return Err(ctx.err(col + i, "empty term in memory operand"));
            }
            negative = b == b'-';
            start = i + 1;
        }
    }
    let last = text[start..].trim();
    if last.is_empty() {
        return Err(ctx.err(col + start, "empty term in memory operand"));
    }
    terms.push((negative, last, col + start));

    for (neg, term, tcol) in terms {
        if let Some((r, s)) = term.split_once('*') {
            let reg = Register::from_name(r.trim())
                .ok_or_else(|| ctx.err(tcol, format!("expected register before `*`, found `{r}`")))?;
            let scale: u8 = match s.trim() {
                "1" => 1,
                "2" => 2,
                "4" => 4,
                "8" => 8,
                other => return Err(ctx.err(tcol, format!("invalid scale `{other}`"))),
            };
            if neg {
                return Err(ctx.err(tcol, "`-` may only precede an immediate"));
            }
            if mem.index.is_some() {
                return Err(ctx.err(tcol, "more than one index register"));
            }
            mem.index = Some((reg, scale));
        } else if let Some(reg) = Register::from_name(term) {
            if neg {
                return Err(ctx.err(tcol, "`-` may only precede an immediate"));
            }
            if mem.base.is_none() && mem.index.is_none() {
                mem.base = Some(reg);
            } else if mem.index.is_none() {
                mem.index = Some((reg, 1));
            } else {
                return Err(ctx.err(tcol, "too many registers in memory operand"));
            }
        } else if let Some(v) = parse_int(term) {
            if mem.disp.is_some() {
                return Err(ctx.err(tcol, "more than one displacement"));
            }
            mem.disp = Some(Disp::Int(if neg { v.wrapping_neg() } else { v }));
        } else if is_symbol(term) {
            if neg {
                return Err(ctx.err(tcol, "`-` may only precede an immediate"));
            }
            if mem.disp.is_some() {
                return Err(ctx.err(tcol, "more than one displacement"));
            }
            mem.disp = Some(Disp::Sym(term.to_string()));
        } else {
            return Err(ctx.err(tcol, format!("invalid memory term `{term}`")));
        }
    }
    Ok(mem)
}

fn parse_operand(ctx: &LineCtx, mnemonic: &str, raw: &str, col: usize) -> Result<Operand, ListingError> {
    let lead = raw.len() - raw.trim_start().len();
    let mut text = raw.trim();
    let mut col = col + lead;
    if text.is_empty() {
        return Err(ctx.err(col, "missing operand"));
    }
    let mut size = None;
    if let Some((first, rest)) = text.split_once(char::is_whitespace) {
        if let Some(sz) = PtrSize::from_keyword(&first.to_ascii_lowercase()) {
            let rest_trim = rest.trim_start();
            let after_ptr = rest_trim
                .strip_prefix("ptr")
                .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
                .ok_or_else(|| ctx.err(col, "expected `ptr` after size keyword"))?;
            size = Some(sz);
            let consumed = text.len() - after_ptr.trim_start().len();
            col += consumed;
            text = after_ptr.trim_start();
            if text.is_empty() {
                return Err(ctx.err(col, "missing operand after size annotation"));
            }
        }
    }

    let kind = if let Some(inner) = text.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| ctx.err(col, "unterminated memory operand"))?;
        OperandKind::Mem(parse_mem(ctx, inner, col + 1)?)
    } else if let Some(sym) = text.strip_prefix("offset ") {
        let sym = sym.trim();
        if !is_symbol(sym) {
            return Err(ctx.err(col, format!("invalid symbol `{sym}`")));
        }
        OperandKind::AbsAddr(sym.to_string())
    } else if let Some(sym) = text.strip_prefix("ds:") {
        if !is_symbol(sym) {
            return Err(ctx.err(col + 3, format!("invalid symbol `{sym}`")));
        }
        OperandKind::DerefAddr {
            symbol: sym.to_string(),
            segment: true,
        }
    } else if let Some(reg) = Register::from_name(&text.to_ascii_lowercase()) {
        OperandKind::Reg(reg)
    } else if let Some(v) = parse_int(text) {
        OperandKind::Imm(v)
    } else {
        let sym = match text.strip_prefix("short ") {
            Some(s) if mnemonic == "jmp" || is_conditional_jump(mnemonic) => s.trim(),
            _ => text,
        };
        if !is_symbol(sym) {
            return Err(ctx.err(col, format!("invalid operand `{text}`")));
        }
        if mnemonic == "call" {
            OperandKind::CallTarget(sym.to_string())
        } else if mnemonic == "jmp" || is_conditional_jump(mnemonic) {
            OperandKind::JumpOffset(sym.to_string())
        } else {
            OperandKind::DerefAddr {
                symbol: sym.to_string(),
                segment: false,
            }
        }
    };
    Ok(Operand { kind, size })
}

fn parse_bytes(ctx: &LineCtx, text: &str, col: usize) -> Result<Vec<u8>, ListingError> {
    let mut out = Vec::new();
    for tok in text.split_whitespace() {
        if tok.len() != 2 {
            return Err(ctx.err(col, format!("invalid opcode byte `{tok}`")));
        }
        let b = u8::from_str_radix(tok, 16).map_err(|_| ctx.err(col, format!("invalid opcode byte `{tok}`")))?;
        out.push(b);
    }
    if out.is_empty() {
        return Err(ctx.err(col, "`!bytes` directive without bytes"));
    }
    Ok(out)
}

/// One body line split into its parts. `instruction` is `None` for
/// label-only or blank lines.
struct BodyLine {
    label: Option<String>,
    instruction: Option<Instruction>,
}

fn parse_body_line(ctx: &LineCtx, raw: &str, opts: ParseOptions) -> Result<BodyLine, ListingError> {
    let (code, comment) = match raw.find(';') {
        Some(i) => (&raw[..i], Some((&raw[i + 1..], i + 2))),
        None => (raw, None),
    };
    let mut bytes = None;
    if let Some((c, ccol)) = comment {
        let trimmed = c.trim_start();
        if let Some(rest) = trimmed.strip_prefix("!bytes") {
            bytes = Some(parse_bytes(ctx, rest, ccol)?);
        }
    }

    let lead = code.len() - code.trim_start().len();
    let mut rest = code.trim();
    let mut col = lead + 1;
    let mut label = None;
    // A label is a leading symbol directly followed by `:`.
    let sym_len = rest.find(|c: char| !is_sym_char(c)).unwrap_or(rest.len());
    if sym_len > 0 && rest[sym_len..].starts_with(':') && is_symbol(&rest[..sym_len]) {
        let name = &rest[..sym_len];
        if name != "ds" {
            label = Some(name.to_string());
            let after = &rest[sym_len + 1..];
            col += sym_len + 1 + (after.len() - after.trim_start().len());
            rest = after.trim_start();
        }
    }

    if rest.is_empty() {
        if bytes.is_some() {
            return Err(ctx.err(col, "`!bytes` directive without instruction"));
        }
        return Ok(BodyLine {
            label,
            instruction: None,
        });
    }

    let mn_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
    let mnemonic = rest[..mn_len].to_ascii_lowercase();
    if !mnemonic.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        || !mnemonic.chars().all(|c| c.is_ascii_alphanumeric())
    {
        return Err(ctx.err(col, format!("invalid mnemonic `{mnemonic}`")));
    }
    let range = arity(&mnemonic);
    if range.is_none() && opts.strict_mnemonics {
        return Err(ListingError::UnknownMnemonic {
            line: ctx.line,
            mnemonic,
        });
    }

    let ops_text = &rest[mn_len..];
    let ops_col = col + mn_len;
    let mut operands = Vec::new();
    if !ops_text.trim().is_empty() {
        let mut start = 0;
        let mut depth = 0i32;
        let b = ops_text.as_bytes();
        for i in 0..=b.len() {
            let at_end = i == b.len();
            if !at_end {
                match b[i] {
                    b'[' => depth += 1,
                    b']' => depth -= 1,
                    _ => {}
                }
            }
            if at_end || (b[i] == b',' && depth == 0) {
                operands.push(parse_operand(ctx, &mnemonic, &ops_text[start..i], ops_col + start)?);
                start = i + 1;
            }
        }
    }

    if let Some((lo, hi)) = range {
        if operands.len() < lo || operands.len() > hi {
            return Err(ctx.err(
                col,
                format!(
                    "`{mnemonic}` takes {} operand(s), found {}",
                    if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") },
                    operands.len()
                ),
            ));
        }
    } else if operands.len() > 3 {
        return Err(ctx.err(col, "at most three operands are allowed"));
    }

    Ok(BodyLine {
        label: None,
        instruction: Some(Instruction {
            mnemonic,
            operands,
            label,
            opcode_bytes: bytes,
        }),
    })
}

/// Parse a single instruction line (label and `!bytes` comment allowed).
pub fn parse_instruction(line: &str, opts: ParseOptions) -> Result<Instruction, ListingError> {
    let ctx = LineCtx { line: 1 };
    let parsed = parse_body_line(&ctx, line, opts)?;
    parsed.instruction.ok_or_else(|| ctx.err(1, "expected an instruction"))
}

/// Parse a listing document into its functions, in document order.
pub fn parse_listing(text: &str, opts: ParseOptions) -> Result<Vec<FunctionListing>, ListingError> {
    let mut functions = Vec::new();
    let mut names = HashSet::new();
    let mut current: Option<(FunctionListing, usize)> = None;
    let mut pending_label: Option<(String, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let ctx = LineCtx { line: idx + 1 };
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix(".func") {
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
                return Err(ctx.err(1, "invalid directive"));
            }
            if current.is_some() {
                return Err(ctx.err(1, "`.func` inside an open function"));
            }
            let rest = rest.split(';').next().unwrap_or("");
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| ctx.err(6, "missing function name"))?;
            if !is_symbol(name) {
                return Err(ctx.err(7, format!("invalid function name `{name}`")));
            }
            let mut label = None;
            for p in parts {
                let ty = p
                    .strip_prefix("ret=")
                    .ok_or_else(|| ctx.err(1, format!("unexpected token `{p}`")))?;
                if label.is_some() {
                    return Err(ctx.err(1, "duplicate `ret=`"));
                }
                label = Some(ty.parse::<TypeLabel>().map_err(|e| ctx.err(1, e.to_string()))?);
            }
            if !names.insert(name.to_string()) {
                return Err(ListingError::DuplicateFunction {
                    line: idx + 1,
                    name: name.to_string(),
                });
            }
            let mut f = FunctionListing::new(name, Vec::new());
            f.true_return_type = label;
            current = Some((f, idx + 1));
            continue;
        }
        if trimmed.starts_with(".endfunc") {
            if trimmed.split(';').next().unwrap_or("").trim() != ".endfunc" {
                return Err(ctx.err(1, "unexpected tokens after `.endfunc`"));
            }
            let (f, _) = current.take().ok_or_else(|| ctx.err(1, "`.endfunc` without `.func`"))?;
            if let Some((l, line)) = pending_label.take() {
                return Err(syntax(
                    line,
                    1,
                    format!("label `{l}` is not followed by an instruction"),
                ));
            }
            functions.push(f);
            continue;
        }
        match current.as_mut() {
            None => {
                if !trimmed.is_empty() && !trimmed.starts_with(';') {
                    return Err(ctx.err(1, "content outside `.func` block"));
                }
            }
            Some((f, _)) => {
                let parsed = parse_body_line(&ctx, raw, opts)?;
                match parsed.instruction {
                    Some(mut ins) => {
                        if let Some((l, line)) = pending_label.take() {
                            if ins.label.is_some() {
                                return Err(syntax(line, 1, format!("label `{l}` followed by another label")));
                            }
                            ins.label = Some(l);
                        }
                        f.instructions.push(ins);
                    }
                    None => {
                        if let Some(l) = parsed.label {
                            if pending_label.is_some() {
                                return Err(ctx.err(1, "two consecutive labels"));
                            }
                            pending_label = Some((l, idx + 1));
                        }
                    }
                }
            }
        }
    }
    if let Some((f, line)) = current {
        return Err(syntax(line, 1, format!("function `{}` is missing `.endfunc`", f.name)));
    }
    Ok(functions)
}
