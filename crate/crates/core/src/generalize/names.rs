//! Parsing canonical feature names back into pattern structures.

use thiserror::Error;

use super::{
    Element, GMem, GOperand, GOperandKind, GeneralizedInstruction, GeneralizedPattern, MnemonicToken, PatternKind,
    RegSlot, ValSlot,
};
use crate::asm::{is_conditional_jump, is_symbol, parse_int, PtrSize, Register};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid feature name `{text}`: {message}")]
pub struct NameError {
    pub text: String,
    pub message: String,
}

fn err(text: &str, message: impl Into<String>) -> NameError {
    NameError {
        text: text.to_string(),
        message: message.into(),
    }
}

fn split_top(text: &str, sep: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    let mut rest = text;
    while !rest.is_empty() {
        if depth == 0 && rest.starts_with(sep) {
            parts.push(std::mem::take(&mut cur));
            rest = &rest[sep.len()..];
            continue;
        }
        let c = rest.chars().next().unwrap();
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            _ => {}
        }
        cur.push(c);
        rest = &rest[c.len_utf8()..];
    }
    parts.push(cur);
    parts
}

fn parse_val(term: &str, neg: bool, whole: &str) -> Result<ValSlot, NameError> {
    if term == "<lit>" {
        if neg {
            return Err(err(whole, "`-` before placeholder"));
        }
        return Ok(ValSlot::Lit);
    }
    if let Some(v) = parse_int(term) {
        return Ok(ValSlot::Int(if neg { v.wrapping_neg() } else { v }));
    }
    if is_symbol(term) && !neg {
        return Ok(ValSlot::Sym(term.to_string()));
    }
    Err(err(whole, format!("invalid value `{term}`")))
}

fn parse_gmem(inner: &str, whole: &str) -> Result<GMem, NameError> {
    let mut mem = GMem {
        base: None,
        index: None,
        disp: None,
    };
    let mut terms = Vec::new();
    let mut start = 0;
    let mut neg = false;
    for (i, c) in inner.char_indices() {
        if c == '+' || c == '-' {
            let t = &inner[start..i];
            if !t.is_empty() {
                terms.push((neg, t));
            } else if i > 0 {
                return Err(err(whole, "empty memory term"));
            }
            neg = c == '-';
            start = i + 1;
        }
    }
    terms.push((neg, &inner[start..]));
    for (neg, t) in terms {
        if t.is_empty() {
            return Err(err(whole, "empty memory term"));
        }
        if let Some((r, s)) = t.split_once('*') {
            let slot = if r == "<reg>" {
                RegSlot::Any
            } else {
                RegSlot::Reg(Register::from_name(r).ok_or_else(|| err(whole, "bad index register"))?)
            };
            if mem.index.is_some() || neg {
                return Err(err(whole, "bad index term"));
            }
            mem.index = Some((slot, parse_val(s, false, whole)?));
        } else if let Some(r) = Register::from_name(t) {
            if neg {
                return Err(err(whole, "`-` before register"));
            }
            if mem.base.is_none() && mem.index.is_none() {
                mem.base = Some(r);
            } else if mem.index.is_none() {
                mem.index = Some((RegSlot::Reg(r), ValSlot::Int(1)));
            } else {
                return Err(err(whole, "too many registers"));
            }
        } else if t == "<reg>" {
            if mem.index.is_some() || neg {
                return Err(err(whole, "bad register placeholder"));
            }
            mem.index = Some((RegSlot::Any, ValSlot::Int(1)));
        } else {
            if mem.disp.is_some() {
                return Err(err(whole, "more than one displacement"));
            }
            mem.disp = Some(parse_val(t, neg, whole)?);
        }
    }
    Ok(mem)
}

fn parse_goperand(text: &str, mnemonic: &str) -> Result<GOperand, NameError> {
    let mut body = text;
    let mut size = None;
    if let Some((kw, rest)) = text.split_once(" ptr ") {
        if let Some(sz) = PtrSize::from_keyword(kw) {
            size = Some(sz);
            body = rest;
        }
    }
    let kind = match body {
        "<lit>" => GOperandKind::Lit,
        "<reg>" => GOperandKind::AnyReg,
        "<mem>" => GOperandKind::AnyMem,
        "<addr>" => GOperandKind::AnyAddr,
        "<*addr>" => GOperandKind::AnyDeref,
        "<off>" => GOperandKind::AnyOff,
        "[<reg>]" => GOperandKind::MemCollapsed,
        _ => {
            if let Some(inner) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
                GOperandKind::Mem(parse_gmem(inner, text)?)
            } else if let Some(sym) = body.strip_prefix("offset ") {
                if !is_symbol(sym) {
                    return Err(err(text, "invalid symbol"));
                }
                GOperandKind::Abs(sym.to_string())
            } else if let Some(sym) = body.strip_prefix("ds:") {
                if !is_symbol(sym) {
                    return Err(err(text, "invalid symbol"));
                }
                GOperandKind::Deref {
                    symbol: sym.to_string(),
                    segment: true,
                }
            } else if let Some(r) = Register::from_name(body) {
                GOperandKind::Reg(r)
            } else if let Some(v) = parse_int(body) {
                GOperandKind::Imm(v)
            } else if is_symbol(body) {
                if mnemonic == "call" {
                    GOperandKind::Call(body.to_string())
                } else if mnemonic == "jmp" || is_conditional_jump(mnemonic) {
                    GOperandKind::Jump(body.to_string())
                } else {
                    GOperandKind::Deref {
                        symbol: body.to_string(),
                        segment: false,
                    }
                }
            } else {
                return Err(err(text, "unrecognized operand"));
            }
        }
    };
    Ok(GOperand { kind, size })
}

fn parse_args(inner: &str, whole: &str) -> Result<Vec<GOperand>, NameError> {
    if inner.is_empty() {
        return Err(err(whole, "empty argument list"));
    }
    split_top(inner, ", ")
        .iter()
        .map(|a| parse_goperand(a, "mov"))
        .collect()
}

pub fn parse_element(text: &str) -> Result<Element, NameError> {
    if let Some(name) = text.strip_prefix('#') {
        if name.is_empty() || name.contains(" | ") {
            return Err(err(text, "invalid discriminator"));
        }
        return Ok(Element::Advanced(name.to_string()));
    }
    match text {
        "callee_epilogue" => return Ok(Element::CalleeEpilogue),
        "caller_epilogue" => return Ok(Element::CallerEpilogue),
        _ => {}
    }
    if let Some(inner) = text.strip_prefix("mov_chain(").and_then(|t| t.strip_suffix(')')) {
        let args = parse_args(inner, text)?;
        if args.len() < 3 {
            return Err(err(text, "mov_chain needs at least three arguments"));
        }
        return Ok(Element::MovChain(args));
    }
    if let Some(inner) = text.strip_prefix("bool_cast(").and_then(|t| t.strip_suffix(')')) {
        let mut args = parse_args(inner, text)?;
        if args.len() != 1 {
            return Err(err(text, "bool_cast takes one argument"));
        }
        return Ok(Element::BoolCast(args.remove(0)));
    }
    let (mn, rest) = match text.split_once(' ') {
        Some((m, r)) => (m, Some(r)),
        None => (text, None),
    };
    let mnemonic = if let Some(c) = mn.strip_prefix('{').and_then(|m| m.strip_suffix('}')) {
        MnemonicToken::Class(c.to_string())
    } else {
        MnemonicToken::Concrete(mn.to_string())
    };
    let bare = match &mnemonic {
        MnemonicToken::Concrete(m) | MnemonicToken::Class(m) => m.clone(),
    };
    if bare.is_empty() || !bare.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) {
        return Err(err(text, "invalid mnemonic"));
    }
    let operands = match rest {
        None => Vec::new(),
        Some(r) => split_top(r, ", ")
            .iter()
            .map(|o| parse_goperand(o, &bare))
            .collect::<Result<_, _>>()?,
    };
    Ok(Element::Instr(GeneralizedInstruction { mnemonic, operands }))
}

/// Parse a canonical feature name. Parsing the name of any generated pattern
/// yields that pattern's structure.
pub fn parse_pattern_name(name: &str) -> Result<GeneralizedPattern, NameError> {
    let (kind, rest) = if let Some(r) = name.strip_prefix("RET: ") {
        (PatternKind::Ret, r)
    } else if let Some(r) = name.strip_prefix("POST: ") {
        (PatternKind::Post, r)
    } else {
        return Err(err(name, "missing RET:/POST: prefix"));
    };
    let elements = split_top(rest, " | ")
        .iter()
        .map(|e| parse_element(e))
        .collect::<Result<Vec<_>, _>>()?;
    let pattern = GeneralizedPattern::new(kind, elements);
    if pattern.canonical_name != name {
        return Err(err(name, "not in canonical form"));
    }
    Ok(pattern)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for name in [
            "RET: mov cx, [ebp+<reg>*<lit>+<lit>] | callee_epilogue",
            "RET: {mov} ecx, _global_var_1234 | callee_epilogue",
            "RET: mov_chain([ebp+<lit>], ebx, eax, <lit>) | callee_epilogue",
            "RET: bool_cast([ebp+<lit>]) | mov eax, [<reg>] | callee_epilogue",
            "POST: caller_epilogue | fstp dword ptr <mem>",
            "POST: #post_widen=zero",
            "RET: push <addr> | jmp <off> | movsd xmm0, <*addr> | callee_epilogue",
            "RET: mov eax, [-8] | callee_epilogue",
        ] {
            let p = parse_pattern_name(name).unwrap();
            assert_eq!(p.canonical_name, name);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_pattern_name("mov eax, 1").is_err());
        assert!(parse_pattern_name("RET: mov eax,  1").is_err());
        assert!(parse_pattern_name("RET: mov eax, [ebp+]").is_err());
    }
}
