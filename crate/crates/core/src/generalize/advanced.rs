//! Discriminators aimed at separating high-level types that share a
//! representation: returned-literal class, call-site widening, division,
//! address loads, FP operand width, hidden-buffer struct returns, edx writes
//! and what the caller does with the returned value.

use super::{match_callee_epilogue, ChunkRef, Element, GeneralizedPattern, PatternKind};
use crate::asm::{Disp, Instruction, OperandKind, PtrSize, Register};

fn is_acc(r: Register) -> bool {
    r.family() == Register::Eax
}

fn writes_first_operand(m: &str) -> bool {
    matches!(
        m,
        "mov"
            | "movzx"
            | "movsx"
            | "lea"
            | "add"
            | "sub"
            | "adc"
            | "sbb"
            | "and"
            | "or"
            | "xor"
            | "imul"
            | "pop"
            | "inc"
            | "dec"
            | "neg"
            | "not"
            | "shl"
            | "shr"
            | "sar"
            | "sal"
            | "rol"
            | "ror"
            | "xchg"
    ) || (m.starts_with("set") && m.len() > 3)
}

fn first_reg(ins: &Instruction) -> Option<Register> {
    ins.operands.first().and_then(|o| o.as_reg())
}

fn ret_literal_class(body: &[Instruction]) -> Option<&'static str> {
    let last_write = body
        .iter()
        .rev()
        .find(|i| writes_first_operand(&i.mnemonic) && first_reg(i).is_some_and(is_acc))?;
    let value = match (last_write.mnemonic.as_str(), last_write.operands.as_slice()) {
        ("mov", [_, src]) => src.as_imm()?,
        ("xor", [a, b]) if a == b => 0,
        _ => return None,
    };
    Some(if value == 0 || value == 1 { "bool_like" } else { "other" })
}

fn fp_width(ins: &Instruction) -> Option<&'static str> {
    if !matches!(ins.mnemonic.as_str(), "fld" | "fst" | "fstp") {
        return None;
    }
    match ins.opcode_bytes.as_deref().and_then(|b| b.first()) {
        Some(0xD9) => return Some("dword"),
        Some(0xDD) => return Some("qword"),
        _ => {}
    }
    match ins.operands.first().and_then(|o| o.size) {
        Some(PtrSize::Dword) => Some("dword"),
        Some(PtrSize::Qword) => Some("qword"),
        _ => None,
    }
}

fn stores_through_register(ins: &Instruction) -> bool {
    ins.mnemonic == "mov"
        && matches!(ins.operands.first().map(|o| &o.kind), Some(OperandKind::Mem(m))
            if m.base.is_some_and(|b| b != Register::Ebp && b != Register::Esp))
}

fn loads_hidden_pointer(ins: &Instruction) -> bool {
    ins.mnemonic == "mov"
        && ins.operands.len() == 2
        && ins.operands[0].as_reg() == Some(Register::Eax)
        && matches!(ins.operands[1].as_mem(), Some(m)
            if m.base == Some(Register::Ebp) && m.index.is_none()
                && matches!(&m.disp, Some(Disp::Sym(s)) if s.starts_with("arg_")))
}

fn reads_acc(ins: &Instruction) -> bool {
    if matches!(ins.mnemonic.as_str(), "cwde" | "cdq" | "cbw" | "cwd") {
        return true;
    }
    let pure_write = matches!(ins.mnemonic.as_str(), "mov" | "movzx" | "movsx" | "lea" | "pop")
        || (ins.mnemonic.starts_with("set") && ins.mnemonic.len() > 3);
    ins.operands.iter().enumerate().any(|(i, o)| match &o.kind {
        OperandKind::Reg(r) => is_acc(*r) && !(i == 0 && pure_write),
        OperandKind::Mem(m) => m.base.is_some_and(is_acc) || m.index.is_some_and(|(r, _)| is_acc(r)),
        _ => false,
    })
}

fn post_destination(next: Option<&Instruction>) -> &'static str {
    let Some(ins) = next else {
        return "unused";
    };
    if !reads_acc(ins) {
        return "unused";
    }
    match ins.operands.first().map(|o| &o.kind) {
        Some(OperandKind::Mem(_)) if ins.mnemonic.starts_with("mov") => "mem",
        _ => "reg",
    }
}

fn pattern(kind: PatternKind, name: String) -> GeneralizedPattern {
    GeneralizedPattern::new(kind, vec![Element::Advanced(name)])
}

/// Discriminator features of a chunk, each a single `#name` element.
pub fn advanced_features(chunk: ChunkRef<'_>) -> Vec<GeneralizedPattern> {
    let kind = chunk.kind();
    let mut names: Vec<String> = Vec::new();
    match chunk {
        ChunkRef::Ret(c) => {
            let seq = c.with_return();
            let end = match_callee_epilogue(&seq).unwrap_or(c.instructions.len());
            let body = &c.instructions[..end];
            if let Some(class) = ret_literal_class(body) {
                names.push(format!("ret_lit={class}"));
            }
            if body.iter().any(|i| matches!(i.mnemonic.as_str(), "div" | "idiv")) {
                names.push("div".into());
            }
            if body
                .iter()
                .any(|i| i.mnemonic == "lea" && first_reg(i) == Some(Register::Eax))
            {
                names.push("lea_eax".into());
            }
            for ins in body {
                if let Some(w) = fp_width(ins) {
                    names.push(format!("fp_{}={w}", ins.mnemonic));
                }
            }
            if body.last().is_some_and(loads_hidden_pointer) && body.iter().any(stores_through_register) {
                names.push("struct_ret".into());
            }
            if body.iter().any(|i| {
                i.mnemonic != "cdq"
                    && writes_first_operand(&i.mnemonic)
                    && first_reg(i).is_some_and(|r| r.family() == Register::Edx)
            }) {
                names.push("edx_written".into());
            }
        }
        ChunkRef::Post(c) => {
            let next = c.next_instruction.as_ref();
            if let Some(ins) = next {
                let widened_acc = ins.operands.get(1).and_then(|o| o.as_reg()).is_some_and(is_acc);
                match ins.mnemonic.as_str() {
                    "movzx" if widened_acc => names.push("post_widen=zero".into()),
                    "movsx" if widened_acc => names.push("post_widen=sign".into()),
                    _ => {}
                }
                if let Some(w) = fp_width(ins) {
                    names.push(format!("fp_{}={w}", ins.mnemonic));
                }
            }
            names.push(format!("post_dest={}", post_destination(next)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    names
        .into_iter()
        .filter(|n| seen.insert(n.clone()))
        .map(|n| pattern(kind, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_instruction, FunctionListing, ParseOptions};
    use crate::extract::{extract_post_call_chunks, extract_ret_chunks};

    fn func(lines: &[&str]) -> FunctionListing {
        FunctionListing::new(
            "_f",
            lines
                .iter()
                .map(|l| parse_instruction(l, ParseOptions::default()).unwrap())
                .collect(),
        )
    }

    fn ret_names(lines: &[&str]) -> Vec<String> {
        let f = func(lines);
        let c = &extract_ret_chunks(&f, 8)[0];
        advanced_features(ChunkRef::Ret(c))
            .into_iter()
            .map(|p| p.canonical_name)
            .collect()
    }

    fn post_names(lines: &[&str]) -> Vec<String> {
        let f = func(lines);
        let c = &extract_post_call_chunks(&[f])[0];
        advanced_features(ChunkRef::Post(c))
            .into_iter()
            .map(|p| p.canonical_name)
            .collect()
    }

    #[test]
    fn literal_class() {
        assert_eq!(
            ret_names(&["mov al, 1", "pop ebp", "retn"]),
            ["RET: #ret_lit=bool_like"]
        );
        assert_eq!(ret_names(&["mov al, 65", "pop ebp", "retn"]), ["RET: #ret_lit=other"]);
    }

    #[test]
    fn ret_discriminators() {
        let n = ret_names(&["mov eax, [ebp+var_4]", "cdq", "idiv ebx", "retn"]);
        assert_eq!(n, ["RET: #div"]);
        let n = ret_names(&["mov ecx, [ebp+arg_4]", "lea eax, [ecx+8]", "retn"]);
        assert_eq!(n, ["RET: #lea_eax"]);
        let n = ret_names(&["fld dword ptr [ebp+var_8] ; !bytes D9 45 F8", "retn"]);
        assert_eq!(n, ["RET: #fp_fld=dword"]);
        let n = ret_names(&["fld qword ptr [ebp+var_8]", "retn"]);
        assert_eq!(n, ["RET: #fp_fld=qword"]);
        let n = ret_names(&[
            "mov ecx, [ebp+arg_0]",
            "mov dword ptr [ecx], 3",
            "mov eax, [ebp+arg_0]",
            "pop ebp",
            "retn",
        ]);
        assert_eq!(n, ["RET: #struct_ret"]);
        let n = ret_names(&["mov eax, 1", "mov edx, 2", "retn"]);
        assert_eq!(n, ["RET: #ret_lit=bool_like", "RET: #edx_written"]);
    }

    #[test]
    fn post_discriminators() {
        assert_eq!(
            post_names(&["call _f", "add esp, 4", "movsx ecx, al"]),
            ["POST: #post_widen=sign", "POST: #post_dest=reg"]
        );
        assert_eq!(
            post_names(&["call _f", "movzx edx, al"]),
            ["POST: #post_widen=zero", "POST: #post_dest=reg"]
        );
        assert_eq!(
            post_names(&["call _f", "mov [ebp+var_4], eax"]),
            ["POST: #post_dest=mem"]
        );
        assert_eq!(post_names(&["call _f", "xor ecx, ecx"]), ["POST: #post_dest=unused"]);
        assert_eq!(post_names(&["call _f"]), ["POST: #post_dest=unused"]);
        assert_eq!(
            post_names(&["call _f", "fstp dword ptr [ebp+var_8] ; !bytes D9 5D F8"]),
            ["POST: #fp_fstp=dword", "POST: #post_dest=unused"]
        );
    }
}
