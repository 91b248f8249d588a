use std::fmt;

use super::{generalize_operand, Element, Level};
use crate::asm::{render_operand, Instruction, Operand, OperandKind, Register};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MacroKind {
    CalleeEpilogue,
    CallerEpilogue,
    MovChain,
    BoolCast,
}

impl MacroKind {
    pub fn name(self) -> &'static str {
        match self {
            MacroKind::CalleeEpilogue => "callee_epilogue",
            MacroKind::CallerEpilogue => "caller_epilogue",
            MacroKind::MovChain => "mov_chain",
            MacroKind::BoolCast => "bool_cast",
        }
    }
}

/// A macro occurrence over `start..end` of the matched sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceMacro {
    pub kind: MacroKind,
    pub start: usize,
    pub end: usize,
    /// Concrete arguments: the chain from final destination back to the
    /// original source for `mov_chain`, the target for `bool_cast`.
    pub args: Vec<Operand>,
}

impl SequenceMacro {
    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    /// Feature element: arguments abstracted at the literal level.
    pub fn element(&self) -> Element {
        let g = |o: &Operand| generalize_operand(o, Level::Literal);
        match self.kind {
            MacroKind::CalleeEpilogue => Element::CalleeEpilogue,
            MacroKind::CallerEpilogue => Element::CallerEpilogue,
            MacroKind::MovChain => Element::MovChain(self.args.iter().map(g).collect()),
            MacroKind::BoolCast => Element::BoolCast(g(&self.args[0])),
        }
    }
}

impl fmt::Display for SequenceMacro {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if matches!(self.kind, MacroKind::MovChain | MacroKind::BoolCast) {
            let args: Vec<String> = self.args.iter().map(render_operand).collect();
            write!(f, "({})", args.join(", "))?;
        }
        Ok(())
    }
}

fn is_pop_of(ins: &Instruction, pred: impl Fn(Register) -> bool) -> bool {
    ins.mnemonic == "pop"
        && ins.operands.len() == 1
        && matches!(ins.operands[0].kind, OperandKind::Reg(r) if pred(r))
        && ins.operands[0].size.is_none()
}

fn is_reg_move(ins: &Instruction, dst: Register, src: Register) -> bool {
    ins.mnemonic == "mov"
        && ins.operands.len() == 2
        && ins.operands[0] == Operand::reg(dst)
        && ins.operands[1] == Operand::reg(src)
}

/// Start of the callee epilogue ending a sequence whose last instruction is
/// a return: callee-saved pops, then `mov esp, ebp`, then `pop ebp`, each
/// optional. `None` when the sequence does not end in a return.
pub fn match_callee_epilogue(seq: &[Instruction]) -> Option<usize> {
    let last = seq.len().checked_sub(1)?;
    if !seq[last].is_return() {
        return None;
    }
    let mut i = last;
    if i > 0 && is_pop_of(&seq[i - 1], |r| r == Register::Ebp) {
        i -= 1;
    }
    if i > 0 && is_reg_move(&seq[i - 1], Register::Esp, Register::Ebp) {
        i -= 1;
    }
    while i > 0 && is_pop_of(&seq[i - 1], Register::is_callee_saved) {
        i -= 1;
    }
    Some(i)
}

fn is_stack_adjust(ins: &Instruction) -> bool {
    ins.mnemonic == "add"
        && ins.operands.len() == 2
        && ins.operands[0] == Operand::reg(Register::Esp)
        && matches!(ins.operands[1].kind, OperandKind::Imm(_))
}

fn match_caller_epilogue(seq: &[Instruction], i: usize, end: usize) -> Option<usize> {
    let ins = &seq[i];
    if !matches!(ins.operands.first().map(|o| &o.kind), Some(OperandKind::CallTarget(_))) || !ins.is_call() {
        return None;
    }
    Some(if i + 1 < end && is_stack_adjust(&seq[i + 1]) {
        i + 2
    } else {
        i + 1
    })
}

fn mov_imm(ins: &Instruction, value: i64) -> Option<&Operand> {
    if ins.mnemonic == "mov" && ins.operands.len() == 2 && ins.operands[1].kind == OperandKind::Imm(value) {
        Some(&ins.operands[0])
    } else {
        None
    }
}

/// `jcc L1; mov X, 1; jmp L2; mov X, 0`
fn match_bool_cast(seq: &[Instruction], i: usize, end: usize) -> Option<Operand> {
    if i + 4 > end {
        return None;
    }
    let jcc = &seq[i];
    let jmp = &seq[i + 2];
    let is_jump_to_sym =
        |ins: &Instruction| matches!(ins.operands.as_slice(), [o] if matches!(o.kind, OperandKind::JumpOffset(_)));
    if !(jcc.is_conditional_jump() && is_jump_to_sym(jcc) && jmp.is_unconditional_jump() && is_jump_to_sym(jmp)) {
        return None;
    }
    let x1 = mov_imm(&seq[i + 1], 1)?;
    let x0 = mov_imm(&seq[i + 3], 0)?;
    (x1 == x0).then(|| x1.clone())
}

/// Longest run of `mov`s starting at `i` where each destination is the next
/// source; returns the exclusive end when at least two movs link.
fn match_mov_chain(seq: &[Instruction], i: usize, end: usize) -> Option<usize> {
    let is_mov = |ins: &Instruction| ins.mnemonic == "mov" && ins.operands.len() == 2;
    if !is_mov(&seq[i]) {
        return None;
    }
    let mut j = i;
    while j + 1 < end && is_mov(&seq[j + 1]) && seq[j].operands[0] == seq[j + 1].operands[1] {
        j += 1;
    }
    (j > i).then_some(j + 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Instr(usize),
    Macro(SequenceMacro),
}

/// Split a sequence into macros and standalone instructions. A trailing
/// return is folded into the callee epilogue first; the remaining macros
/// are matched left to right, longest first.
pub fn segment(seq: &[Instruction]) -> Vec<Segment> {
    let epilogue = match_callee_epilogue(seq);
    let end = epilogue.unwrap_or(seq.len());
    let mut out = Vec::new();
    let mut i = 0;
    while i < end {
        if let Some(j) = match_caller_epilogue(seq, i, end) {
            out.push(Segment::Macro(SequenceMacro {
                kind: MacroKind::CallerEpilogue,
                start: i,
                end: j,
                args: Vec::new(),
            }));
            i = j;
        } else if let Some(x) = match_bool_cast(seq, i, end) {
            out.push(Segment::Macro(SequenceMacro {
                kind: MacroKind::BoolCast,
                start: i,
                end: i + 4,
                args: vec![x],
            }));
            i += 4;
        } else if let Some(j) = match_mov_chain(seq, i, end) {
            let mut args = vec![seq[j - 1].operands[0].clone()];
            for k in (i..j).rev() {
                args.push(seq[k].operands[1].clone());
            }
            out.push(Segment::Macro(SequenceMacro {
                kind: MacroKind::MovChain,
                start: i,
                end: j,
                args,
            }));
            i = j;
        } else {
            out.push(Segment::Instr(i));
            i += 1;
        }
    }
    if let Some(s) = epilogue {
        out.push(Segment::Macro(SequenceMacro {
            kind: MacroKind::CalleeEpilogue,
            start: s,
            end: seq.len(),
            args: Vec::new(),
        }));
    }
    out
}

/// Every macro occurrence in the sequence, ordered by position.
pub fn match_sequence_macros(seq: &[Instruction]) -> Vec<SequenceMacro> {
    segment(seq)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Macro(m) => Some(m),
            Segment::Instr(_) => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_instruction, ParseOptions};

    fn seq(lines: &[&str]) -> Vec<Instruction> {
        lines
            .iter()
            .map(|l| parse_instruction(l, ParseOptions::default()).unwrap())
            .collect()
    }

    #[test]
    fn epilogue_variants() {
        let s = seq(&["mov eax, 1", "pop esi", "pop edi", "mov esp, ebp", "pop ebp", "retn"]);
        assert_eq!(match_callee_epilogue(&s), Some(1));
        let s = seq(&["pop ecx", "retn"]);
        assert_eq!(match_callee_epilogue(&s), Some(1));
        let s = seq(&["retn"]);
        assert_eq!(match_callee_epilogue(&s), Some(0));
        assert_eq!(match_callee_epilogue(&seq(&["pop ebp"])), None);
    }

    #[test]
    fn chain_and_cast() {
        let s = seq(&["mov eax, 0", "mov ebx, eax", "mov [ebp+var_8], ebx"]);
        let m = match_sequence_macros(&s);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].to_string(), "mov_chain([ebp+var_8], ebx, eax, 0)");
        assert_eq!(m[0].span(), (0, 3));
        assert_eq!(m[0].element().to_string(), "mov_chain([ebp+<lit>], ebx, eax, <lit>)");

        let s = seq(&[
            "ja loc_D9B6B",
            "mov [ebp+var_10], 1",
            "jmp loc_D9B72",
            "mov [ebp+var_10], 0",
        ]);
        let m = match_sequence_macros(&s);
        assert_eq!(m[0].to_string(), "bool_cast([ebp+var_10])");
        assert_eq!(m[0].span(), (0, 4));
    }

    #[test]
    fn caller_epilogue_spans() {
        let m = match_sequence_macros(&seq(&["call _func56", "add esp, 4"]));
        assert_eq!((m[0].kind, m[0].span()), (MacroKind::CallerEpilogue, (0, 2)));
        let m = match_sequence_macros(&seq(&["call _proc2"]));
        assert_eq!((m[0].kind, m[0].span()), (MacroKind::CallerEpilogue, (0, 1)));
    }

    #[test]
    fn segments_partition_sequence() {
        let s = seq(&["mov ecx, 1", "mov eax, ecx", "cdq", "pop ebp", "retn"]);
        let segs = segment(&s);
        let mut covered = Vec::new();
        for seg in &segs {
            match seg {
                Segment::Instr(i) => covered.push(*i),
                Segment::Macro(m) => covered.extend(m.start..m.end),
            }
        }
        assert_eq!(covered, (0..s.len()).collect::<Vec<_>>());
    }
}
