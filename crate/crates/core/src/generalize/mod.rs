//! Operand, mnemonic and sequence generalization of instruction chunks into
//! named binary features.
//!
//! Feature names follow `("RET:"|"POST:") element { " | " element }`. An
//! element is a macro (`callee_epilogue`, `caller_epilogue`,
//! `mov_chain(...)`, `bool_cast(...)`), a `#`-prefixed discriminator, or a
//! generalized instruction in which operands may be the placeholders
//! `<lit>`, `<reg>`, `<addr>`, `<*addr>`, `<off>` and `<mem>`. A braced
//! mnemonic such as `{mov}` names a mnemonic class.

mod advanced;
mod chunk;
mod lattice;
mod macros;
mod names;

use std::fmt::{self, Write as _};

use crate::asm::{PtrSize, Register};

pub use advanced::advanced_features;
pub use chunk::{generalize_chunk, ChunkPatterns, ChunkRef, DEFAULT_BUDGET};
pub use lattice::{concrete_operand, generalize_instruction, generalize_operand, Level};
pub use macros::{match_callee_epilogue, match_sequence_macros, segment, MacroKind, Segment, SequenceMacro};
pub use names::{parse_element, parse_pattern_name, NameError};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MnemonicToken {
    Concrete(String),
    /// Mnemonic class, rendered in braces.
    Class(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegSlot {
    Reg(Register),
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValSlot {
    Int(i64),
    Sym(String),
    Lit,
}

/// Memory operand with per-component abstraction. The base is always
/// concrete; collapsing the whole operand is [`GOperandKind::MemCollapsed`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GMem {
    pub base: Option<Register>,
    pub index: Option<(RegSlot, ValSlot)>,
    pub disp: Option<ValSlot>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GOperandKind {
    Reg(Register),
    AnyReg,
    Imm(i64),
    Lit,
    Mem(GMem),
    /// `[<reg>]`: any memory operand.
    MemCollapsed,
    /// `<mem>`
    AnyMem,
    Abs(String),
    AnyAddr,
    Deref {
        symbol: String,
        segment: bool,
    },
    AnyDeref,
    Jump(String),
    Call(String),
    AnyOff,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GOperand {
    pub kind: GOperandKind,
    pub size: Option<PtrSize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeneralizedInstruction {
    pub mnemonic: MnemonicToken,
    pub operands: Vec<GOperand>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    Instr(GeneralizedInstruction),
    CalleeEpilogue,
    CallerEpilogue,
    MovChain(Vec<GOperand>),
    BoolCast(GOperand),
    /// Discriminator feature, rendered as `#name`.
    Advanced(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternKind {
    Ret,
    Post,
}

impl PatternKind {
    pub fn prefix(self) -> &'static str {
        match self {
            PatternKind::Ret => "RET:",
            PatternKind::Post => "POST:",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GeneralizedPattern {
    pub kind: PatternKind,
    pub elements: Vec<Element>,
    pub canonical_name: String,
}

impl GeneralizedPattern {
    pub fn new(kind: PatternKind, elements: Vec<Element>) -> Self {
        let canonical_name = canonical_name(kind, &elements);
        GeneralizedPattern {
            kind,
            elements,
            canonical_name,
        }
    }
}

pub fn canonical_name(kind: PatternKind, elements: &[Element]) -> String {
    let mut out = String::from(kind.prefix());
    for (i, e) in elements.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { " | " });
        out.push_str(&e.to_string());
    }
    out
}

fn write_val(out: &mut String, v: &ValSlot, leading: bool) {
    match v {
        ValSlot::Int(i) => {
            if *i < 0 || leading {
                let _ = write!(out, "{i}");
            } else {
                let _ = write!(out, "+{i}");
            }
        }
        ValSlot::Sym(s) => {
            if !leading {
                out.push('+');
            }
            out.push_str(s);
        }
        ValSlot::Lit => {
            if !leading {
                out.push('+');
            }
            out.push_str("<lit>");
        }
    }
}

fn render_gmem(m: &GMem) -> String {
    let mut out = String::from("[");
    let mut leading = true;
    if let Some(b) = m.base {
        out.push_str(&b.name());
        leading = false;
    }
    if let Some((r, s)) = &m.index {
        if !leading {
            out.push('+');
        }
        match r {
            RegSlot::Reg(r) => out.push_str(&r.name()),
            RegSlot::Any => out.push_str("<reg>"),
        }
        match s {
            ValSlot::Int(1) if m.base.is_some() => {}
            ValSlot::Int(v) => {
                let _ = write!(out, "*{v}");
            }
            ValSlot::Lit => out.push_str("*<lit>"),
            ValSlot::Sym(sym) => {
                let _ = write!(out, "*{sym}");
            }
        }
        leading = false;
    }
    if let Some(d) = &m.disp {
        write_val(&mut out, d, leading);
    }
    out.push(']');
    out
}

impl fmt::Display for GOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(sz) = self.size {
            write!(f, "{} ptr ", sz.keyword())?;
        }
        match &self.kind {
            GOperandKind::Reg(r) => f.write_str(&r.name()),
            GOperandKind::AnyReg => f.write_str("<reg>"),
            GOperandKind::Imm(v) => write!(f, "{v}"),
            GOperandKind::Lit => f.write_str("<lit>"),
            GOperandKind::Mem(m) => f.write_str(&render_gmem(m)),
            GOperandKind::MemCollapsed => f.write_str("[<reg>]"),
            GOperandKind::AnyMem => f.write_str("<mem>"),
            GOperandKind::Abs(s) => write!(f, "offset {s}"),
            GOperandKind::AnyAddr => f.write_str("<addr>"),
            GOperandKind::Deref { symbol, segment } => {
                if *segment {
                    f.write_str("ds:")?;
                }
                f.write_str(symbol)
            }
            GOperandKind::AnyDeref => f.write_str("<*addr>"),
            GOperandKind::Jump(s) | GOperandKind::Call(s) => f.write_str(s),
            GOperandKind::AnyOff => f.write_str("<off>"),
        }
    }
}

impl fmt::Display for MnemonicToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MnemonicToken::Concrete(m) => f.write_str(m),
            MnemonicToken::Class(c) => write!(f, "{{{c}}}"),
        }
    }
}

impl fmt::Display for GeneralizedInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.mnemonic)?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Instr(g) => write!(f, "{g}"),
            Element::CalleeEpilogue => f.write_str("callee_epilogue"),
            Element::CallerEpilogue => f.write_str("caller_epilogue"),
            Element::MovChain(args) => {
                f.write_str("mov_chain(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Element::BoolCast(x) => write!(f, "bool_cast({x})"),
            Element::Advanced(name) => write!(f, "#{name}"),
        }
    }
}

impl fmt::Display for GeneralizedPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name)
    }
}
