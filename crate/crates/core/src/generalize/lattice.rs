use super::{GMem, GOperand, GOperandKind, GeneralizedInstruction, MnemonicToken, RegSlot, ValSlot};
use crate::asm::{mnemonic_class, Disp, Instruction, MemRef, Operand, OperandKind};

/// Operand abstraction levels, applied uniformly to every operand of an
/// instruction. Size annotations survive at every level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Concrete,
    /// Literals, displacements and scales become `<lit>`; addresses become
    /// `<addr>`, `<*addr>` or `<off>`.
    Literal,
    /// As `Literal`, and memory index registers become `<reg>`.
    Index,
    /// Registers become `<reg>` and memory operands `<mem>`.
    Whole,
    /// Registers widen to their 32-bit family and memory collapses to `[<reg>]`.
    Collapse,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Concrete,
        Level::Literal,
        Level::Index,
        Level::Whole,
        Level::Collapse,
    ];
}

fn concrete_mem(m: &MemRef) -> GMem {
    GMem {
        base: m.base,
        index: m.index.map(|(r, s)| (RegSlot::Reg(r), ValSlot::Int(s as i64))),
        disp: m.disp.as_ref().map(|d| match d {
            Disp::Int(v) => ValSlot::Int(*v),
            Disp::Sym(s) => ValSlot::Sym(s.clone()),
        }),
    }
}

pub fn concrete_operand(op: &Operand) -> GOperand {
    let kind = match &op.kind {
        OperandKind::Reg(r) => GOperandKind::Reg(*r),
        OperandKind::Imm(v) => GOperandKind::Imm(*v),
        OperandKind::Mem(m) => GOperandKind::Mem(concrete_mem(m)),
        OperandKind::AbsAddr(s) => GOperandKind::Abs(s.clone()),
        OperandKind::DerefAddr { symbol, segment } => GOperandKind::Deref {
            symbol: symbol.clone(),
            segment: *segment,
        },
        OperandKind::JumpOffset(s) => GOperandKind::Jump(s.clone()),
        OperandKind::CallTarget(s) => GOperandKind::Call(s.clone()),
    };
    GOperand { kind, size: op.size }
}

pub fn generalize_operand(op: &Operand, level: Level) -> GOperand {
    if level == Level::Concrete {
        return concrete_operand(op);
    }
    let kind = match &op.kind {
        OperandKind::Reg(r) => match level {
            Level::Whole => GOperandKind::AnyReg,
            Level::Collapse => GOperandKind::Reg(r.family()),
            _ => GOperandKind::Reg(*r),
        },
        OperandKind::Imm(_) => GOperandKind::Lit,
        OperandKind::Mem(m) => match level {
            Level::Whole => GOperandKind::AnyMem,
            Level::Collapse => GOperandKind::MemCollapsed,
            _ => GOperandKind::Mem(GMem {
                base: m.base,
                index: m.index.map(|(r, _)| {
                    let slot = if level == Level::Index {
                        RegSlot::Any
                    } else {
                        RegSlot::Reg(r)
                    };
                    (slot, ValSlot::Lit)
                }),
                disp: m.disp.as_ref().map(|_| ValSlot::Lit),
            }),
        },
        OperandKind::AbsAddr(_) => GOperandKind::AnyAddr,
        OperandKind::DerefAddr { .. } => GOperandKind::AnyDeref,
        OperandKind::JumpOffset(_) | OperandKind::CallTarget(_) => GOperandKind::AnyOff,
    };
    GOperand { kind, size: op.size }
}

/// Every distinct generalization of an instruction across operand levels and
/// mnemonic classes. The fully concrete form is dropped whenever any other
/// form exists.
pub fn generalize_instruction(ins: &Instruction) -> Vec<GeneralizedInstruction> {
    let mut mnemonics = vec![MnemonicToken::Concrete(ins.mnemonic.clone())];
    if let Some(class) = mnemonic_class(&ins.mnemonic) {
        mnemonics.push(MnemonicToken::Class(class.to_string()));
    }
    let mut out: Vec<GeneralizedInstruction> = Vec::new();
    for level in Level::ALL {
        let operands: Vec<GOperand> = ins.operands.iter().map(|o| generalize_operand(o, level)).collect();
        for m in &mnemonics {
            let g = GeneralizedInstruction {
                mnemonic: m.clone(),
                operands: operands.clone(),
            };
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    if out.len() > 1 {
        out.remove(0);
    }
    out
}

impl GOperand {
    /// Whether this (possibly abstract) operand covers a concrete operand.
    pub fn matches(&self, op: &Operand) -> bool {
        if self.size != op.size {
            return false;
        }
        match (&self.kind, &op.kind) {
            (GOperandKind::Reg(g), OperandKind::Reg(r)) => g == r || r.family() == *g,
            (GOperandKind::AnyReg, OperandKind::Reg(_)) => true,
            (GOperandKind::Imm(a), OperandKind::Imm(b)) => a == b,
            (GOperandKind::Lit, OperandKind::Imm(_)) => true,
            (GOperandKind::Mem(g), OperandKind::Mem(m)) => {
                let index_ok = match (&g.index, &m.index) {
                    (None, None) => true,
                    (Some((gr, gs)), Some((r, s))) => {
                        let reg_ok = match gr {
                            RegSlot::Any => true,
                            RegSlot::Reg(x) => x == r,
                        };
                        let scale_ok = match gs {
                            ValSlot::Lit => true,
                            ValSlot::Int(v) => *v == *s as i64,
                            ValSlot::Sym(_) => false,
                        };
                        reg_ok && scale_ok
                    }
                    _ => false,
                };
                let disp_ok = match (&g.disp, &m.disp) {
                    (None, None) => true,
                    (Some(ValSlot::Lit), Some(_)) => true,
                    (Some(ValSlot::Int(a)), Some(Disp::Int(b))) => a == b,
                    (Some(ValSlot::Sym(a)), Some(Disp::Sym(b))) => a == b,
                    _ => false,
                };
                g.base == m.base && index_ok && disp_ok
            }
            (GOperandKind::MemCollapsed | GOperandKind::AnyMem, OperandKind::Mem(_)) => true,
            (GOperandKind::Abs(a), OperandKind::AbsAddr(b)) => a == b,
            (GOperandKind::AnyAddr, OperandKind::AbsAddr(_)) => true,
            (GOperandKind::Deref { symbol: a, segment: sa }, OperandKind::DerefAddr { symbol: b, segment: sb }) => {
                a == b && sa == sb
            }
            (GOperandKind::AnyDeref, OperandKind::DerefAddr { .. }) => true,
            (GOperandKind::Jump(a), OperandKind::JumpOffset(b)) => a == b,
            (GOperandKind::Call(a), OperandKind::CallTarget(b)) => a == b,
            (GOperandKind::AnyOff, OperandKind::JumpOffset(_) | OperandKind::CallTarget(_)) => true,
            _ => false,
        }
    }
}

impl GeneralizedInstruction {
    /// Whether this generalized instruction covers a concrete instruction.
    pub fn subsumes(&self, ins: &Instruction) -> bool {
        let mnemonic_ok = match &self.mnemonic {
            MnemonicToken::Concrete(m) => *m == ins.mnemonic,
            MnemonicToken::Class(c) => mnemonic_class(&ins.mnemonic) == Some(c.as_str()),
        };
        mnemonic_ok
            && self.operands.len() == ins.operands.len()
            && self.operands.iter().zip(&ins.operands).all(|(g, o)| g.matches(o))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_instruction, ParseOptions};

    fn forms(s: &str) -> Vec<String> {
        let ins = parse_instruction(s, ParseOptions::default()).unwrap();
        generalize_instruction(&ins).iter().map(|g| g.to_string()).collect()
    }

    #[test]
    fn lattice_levels() {
        let f = forms("mov cx, [ebp+eax*2+var_10]");
        for expected in [
            "mov cx, [ebp+eax*<lit>+<lit>]",
            "mov cx, [ebp+<reg>*<lit>+<lit>]",
            "mov ecx, [<reg>]",
            "mov <reg>, <mem>",
            "{mov} cx, [ebp+eax*2+var_10]",
        ] {
            assert!(f.contains(&expected.to_string()), "{expected} not in {f:?}");
        }
        assert!(!f.contains(&"mov cx, [ebp+eax*2+var_10]".to_string()));
    }

    #[test]
    fn nothing_to_abstract() {
        assert_eq!(forms("cwde"), vec!["cwde"]);
        assert_eq!(forms("retn"), vec!["retn"]);
    }

    #[test]
    fn size_hint_kept() {
        let f = forms("fstp qword ptr [ebp+var_8]");
        assert!(f.contains(&"fstp qword ptr [ebp+<lit>]".to_string()));
        assert!(f.contains(&"fstp qword ptr <mem>".to_string()));
    }

    #[test]
    fn forms_cover_source() {
        for s in [
            "mov cx, [ebp+eax*2+var_10]",
            "push offset $SG1",
            "jmp loc_1",
            "movsx ecx, _g",
            "mov al, byte ptr [ecx+4]",
            "lea eax, [ecx*4]",
        ] {
            let ins = parse_instruction(s, ParseOptions::default()).unwrap();
            for g in generalize_instruction(&ins) {
                assert!(g.subsumes(&ins), "{g} does not cover {s}");
            }
        }
    }
}
