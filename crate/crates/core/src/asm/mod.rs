//! 32-bit x86 (Intel syntax) instruction model and the canonical listing format.
//!
//! A listing document is a sequence of `.func NAME [ret=TYPE]` ... `.endfunc`
//! blocks. Each body line holds an optional label, an optional instruction
//! and an optional `;` comment. A comment of the form `; !bytes D9 5D FC`
//! attaches raw opcode bytes to the instruction on that line.

mod parser;

use std::fmt::{self, Write as _};

use crate::label::TypeLabel;

pub(crate) use parser::{is_symbol, parse_int};
pub use parser::{parse_instruction, parse_listing, ParseOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Register {
    Eax,
    Ebx,
    Ecx,
    Edx,
    Esi,
    Edi,
    Ebp,
    Esp,
    Ax,
    Bx,
    Cx,
    Dx,
    Al,
    Ah,
    Bl,
    Cl,
    Dl,
    /// x87 stack slot, 0..=7.
    St(u8),
    /// SSE register, 0..=7.
    Xmm(u8),
}

impl Register {
    pub fn all() -> Vec<Register> {
        use Register::*;
        let mut regs = vec![
            Eax, Ebx, Ecx, Edx, Esi, Edi, Ebp, Esp, Ax, Bx, Cx, Dx, Al, Ah, Bl, Cl, Dl,
        ];
        regs.extend((0..8).map(St));
        regs.extend((0..8).map(Xmm));
        regs
    }

    pub fn from_name(name: &str) -> Option<Register> {
        use Register::*;
        let reg = match name {
            "eax" => Eax,
            "ebx" => Ebx,
            "ecx" => Ecx,
            "edx" => Edx,
            "esi" => Esi,
            "edi" => Edi,
            "ebp" => Ebp,
            "esp" => Esp,
            "ax" => Ax,
            "bx" => Bx,
            "cx" => Cx,
            "dx" => Dx,
            "al" => Al,
            "ah" => Ah,
            "bl" => Bl,
            "cl" => Cl,
            "dl" => Dl,
            "st" => St(0),
            _ => {
                let (prefix, n) = if let Some(n) = name.strip_prefix("xmm") {
                    ("xmm", n)
                } else {
                    let n = name.strip_prefix("st")?;
                    ("st", n.trim_start_matches('(').trim_end_matches(')'))
                };
                let idx: u8 = n.parse().ok().filter(|i| *i < 8)?;
                if n.len() != 1 {
                    return None;
                }
                if prefix == "xmm" {
                    Xmm(idx)
                } else {
                    St(idx)
                }
            }
        };
        Some(reg)
    }

    pub fn name(self) -> String {
        use Register::*;
        match self {
            Eax => "eax".into(),
            Ebx => "ebx".into(),
            Ecx => "ecx".into(),
            Edx => "edx".into(),
            Esi => "esi".into(),
            Edi => "edi".into(),
            Ebp => "ebp".into(),
            Esp => "esp".into(),
            Ax => "ax".into(),
            Bx => "bx".into(),
            Cx => "cx".into(),
            Dx => "dx".into(),
            Al => "al".into(),
            Ah => "ah".into(),
            Bl => "bl".into(),
            Cl => "cl".into(),
            Dl => "dl".into(),
            St(i) => format!("st{i}"),
            Xmm(i) => format!("xmm{i}"),
        }
    }

    /// Width in bits.
    pub fn width(self) -> u16 {
        use Register::*;
        match self {
            Al | Ah | Bl | Cl | Dl => 8,
            Ax | Bx | Cx | Dx => 16,
            Eax | Ebx | Ecx | Edx | Esi | Edi | Ebp | Esp => 32,
            St(_) => 80,
            Xmm(_) => 128,
        }
    }

    /// Full 32-bit register a sub-register belongs to; identity otherwise.
    pub fn family(self) -> Register {
        use Register::*;
        match self {
            Al | Ah | Ax => Eax,
            Bl | Bx => Ebx,
            Cl | Cx => Ecx,
            Dl | Dx => Edx,
            other => other,
        }
    }

    /// Callee-saved under cdecl as emitted by cl.
    pub fn is_callee_saved(self) -> bool {
        matches!(self, Register::Ebx | Register::Esi | Register::Edi | Register::Ebp)
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PtrSize {
    Byte,
    Word,
    Dword,
    Qword,
}

impl PtrSize {
    pub fn bits(self) -> u16 {
        match self {
            PtrSize::Byte => 8,
            PtrSize::Word => 16,
            PtrSize::Dword => 32,
            PtrSize::Qword => 64,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            PtrSize::Byte => "byte",
            PtrSize::Word => "word",
            PtrSize::Dword => "dword",
            PtrSize::Qword => "qword",
        }
    }

    pub fn from_keyword(s: &str) -> Option<PtrSize> {
        match s {
            "byte" => Some(PtrSize::Byte),
            "word" => Some(PtrSize::Word),
            "dword" => Some(PtrSize::Dword),
            "qword" => Some(PtrSize::Qword),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Disp {
    Sym(String),
    Int(i64),
}

/// `[base + index*scale + disp]`. At least one component is present and the
/// scale only exists alongside an index register.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemRef {
    pub base: Option<Register>,
    pub index: Option<(Register, u8)>,
    pub disp: Option<Disp>,
}

impl MemRef {
    pub fn base_disp(base: Register, disp: Disp) -> Self {
        MemRef {
            base: Some(base),
            index: None,
            disp: Some(disp),
        }
    }

    pub fn is_valid(&self) -> bool {
        let has_any = self.base.is_some() || self.index.is_some() || self.disp.is_some();
        let scale_ok = self.index.is_none_or(|(_, s)| matches!(s, 1 | 2 | 4 | 8));
        has_any && scale_ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperandKind {
    Reg(Register),
    Imm(i64),
    Mem(MemRef),
    /// `offset sym`: the address itself.
    AbsAddr(String),
    /// A dereferenced absolute address: `ds:sym`, or a bare data symbol when
    /// `segment` is false.
    DerefAddr {
        symbol: String,
        segment: bool,
    },
    /// Branch target of a jump.
    JumpOffset(String),
    /// Target of a `call`.
    CallTarget(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Operand {
    pub kind: OperandKind,
    pub size: Option<PtrSize>,
}

impl Operand {
    pub fn new(kind: OperandKind) -> Self {
        Operand { kind, size: None }
    }

    pub fn reg(r: Register) -> Self {
        Operand::new(OperandKind::Reg(r))
    }

    pub fn imm(v: i64) -> Self {
        Operand::new(OperandKind::Imm(v))
    }

    pub fn mem(m: MemRef) -> Self {
        Operand::new(OperandKind::Mem(m))
    }

    pub fn sized(mut self, size: PtrSize) -> Self {
        self.size = Some(size);
        self
    }

    pub fn as_reg(&self) -> Option<Register> {
        match self.kind {
            OperandKind::Reg(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_imm(&self) -> Option<i64> {
        match self.kind {
            OperandKind::Imm(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemRef> {
        match &self.kind {
            OperandKind::Mem(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub mnemonic: String,
    pub operands: Vec<Operand>,
    pub label: Option<String>,
    pub opcode_bytes: Option<Vec<u8>>,
}

impl Instruction {
    pub fn new(mnemonic: impl Into<String>, operands: Vec<Operand>) -> Self {
        Instruction {
            mnemonic: mnemonic.into(),
            operands,
            label: None,
            opcode_bytes: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_bytes(mut self, bytes: Vec<u8>) -> Self {
        self.opcode_bytes = Some(bytes);
        self
    }

    pub fn is_return(&self) -> bool {
        matches!(self.mnemonic.as_str(), "retn" | "ret")
    }

    pub fn is_call(&self) -> bool {
        self.mnemonic == "call"
    }

    pub fn is_unconditional_jump(&self) -> bool {
        self.mnemonic == "jmp"
    }

    pub fn is_conditional_jump(&self) -> bool {
        is_conditional_jump(&self.mnemonic)
    }

    pub fn call_target(&self) -> Option<&str> {
        if !self.is_call() {
            return None;
        }
        match self.operands.first().map(|o| &o.kind) {
            Some(OperandKind::CallTarget(s)) => Some(s),
            _ => None,
        }
    }

    pub fn operand(&self, i: usize) -> Option<&Operand> {
        self.operands.get(i)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_instruction(self))
    }
}

pub fn is_conditional_jump(mnemonic: &str) -> bool {
    matches!(
        mnemonic,
        "ja" | "jae"
            | "jb"
            | "jbe"
            | "jc"
            | "jnc"
            | "je"
            | "jne"
            | "jz"
            | "jnz"
            | "jg"
            | "jge"
            | "jl"
            | "jle"
            | "js"
            | "jns"
            | "jo"
            | "jno"
            | "jp"
            | "jnp"
    )
}

/// Allowed operand-count range for known mnemonics; `None` for opaque ones.
pub fn arity(mnemonic: &str) -> Option<(usize, usize)> {
    let range = match mnemonic {
        "mov" | "movzx" | "movsx" | "movsd" | "movss" | "movd" | "movq" | "lea" | "add" | "sub" | "adc" | "sbb"
        | "and" | "or" | "xor" | "cmp" | "test" | "shl" | "shr" | "sar" | "sal" | "rol" | "ror" | "xchg"
        | "cvtsi2sd" | "cvttsd2si" | "cvtss2sd" | "cvtsd2ss" | "addsd" | "subsd" | "mulsd" | "divsd" | "comisd"
        | "ucomisd" => (2, 2),
        "imul" => (1, 3),
        "push" | "pop" | "inc" | "dec" | "neg" | "not" | "mul" | "div" | "idiv" | "call" | "jmp" | "fld" | "fst"
        | "fstp" | "fild" | "fist" | "fistp" | "fcom" | "fcomp" => (1, 1),
        "fadd" | "fsub" | "fmul" | "fdiv" | "faddp" | "fsubp" | "fmulp" | "fdivp" | "fsubr" | "fdivr" | "fxch" => {
            (0, 2)
        }
        "retn" | "ret" => (0, 1),
        "cwde" | "cdq" | "cbw" | "cwd" | "leave" | "nop" | "fldz" | "fld1" | "fchs" | "fabs" | "fnstsw" | "sahf"
        | "int3" | "pushf" | "popf" | "fucompp" | "fcompp" => (0, 1),
        m if is_conditional_jump(m) => (1, 1),
        m if m.starts_with("set") && m.len() > 3 => (1, 1),
        _ => return None,
    };
    Some(range)
}

/// Mnemonic-class token for mnemonics that share a generalization class.
pub fn mnemonic_class(mnemonic: &str) -> Option<&'static str> {
    match mnemonic {
        "mov" | "movzx" | "movsx" => Some("mov"),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionListing {
    pub name: String,
    pub instructions: Vec<Instruction>,
    /// Ground truth; present iff the listing is labeled.
    pub true_return_type: Option<TypeLabel>,
}

impl FunctionListing {
    pub fn new(name: impl Into<String>, instructions: Vec<Instruction>) -> Self {
        FunctionListing {
            name: name.into(),
            instructions,
            true_return_type: None,
        }
    }

    pub fn labeled(mut self, label: TypeLabel) -> Self {
        self.true_return_type = Some(label);
        self
    }

    /// `(index, callee)` for every direct call in the body.
    pub fn call_sites(&self) -> Vec<(usize, String)> {
        self.instructions
            .iter()
            .enumerate()
            .filter_map(|(i, ins)| ins.call_target().map(|t| (i, t.to_string())))
            .collect()
    }

    pub fn return_indices(&self) -> Vec<usize> {
        self.instructions
            .iter()
            .enumerate()
            .filter(|(_, ins)| ins.is_return())
            .map(|(i, _)| i)
            .collect()
    }
}

fn render_disp(out: &mut String, disp: &Disp, leading: bool) {
    match disp {
        Disp::Sym(s) => {
            if !leading {
                out.push('+');
            }
            out.push_str(s);
        }
        Disp::Int(v) => {
            if *v < 0 || leading {
                let _ = write!(out, "{v}");
            } else {
                let _ = write!(out, "+{v}");
            }
        }
    }
}

pub fn render_mem(m: &MemRef) -> String {
    let mut out = String::from("[");
    let mut leading = true;
    if let Some(b) = m.base {
        out.push_str(&b.name());
        leading = false;
    }
    if let Some((r, s)) = m.index {
        if !leading {
            out.push('+');
        }
        out.push_str(&r.name());
        if s != 1 || m.base.is_none() {
            let _ = write!(out, "*{s}");
        }
        leading = false;
    }
    if let Some(d) = &m.disp {
        render_disp(&mut out, d, leading);
    }
    out.push(']');
    out
}

pub fn render_operand(op: &Operand) -> String {
    let mut out = String::new();
    if let Some(sz) = op.size {
        out.push_str(sz.keyword());
        out.push_str(" ptr ");
    }
    match &op.kind {
        OperandKind::Reg(r) => out.push_str(&r.name()),
        OperandKind::Imm(v) => {
            let _ = write!(out, "{v}");
        }
        OperandKind::Mem(m) => out.push_str(&render_mem(m)),
        OperandKind::AbsAddr(s) => {
            out.push_str("offset ");
            out.push_str(s);
        }
        OperandKind::DerefAddr { symbol, segment } => {
            if *segment {
                out.push_str("ds:");
            }
            out.push_str(symbol);
        }
        OperandKind::JumpOffset(s) | OperandKind::CallTarget(s) => out.push_str(s),
    }
    out
}

/// Canonical single-line text for an instruction, including its label and
/// opcode-byte directive when present.
pub fn render_instruction(instr: &Instruction) -> String {
    let mut out = String::new();
    if let Some(l) = &instr.label {
        out.push_str(l);
        out.push_str(": ");
    }
    out.push_str(&instr.mnemonic);
    for (i, op) in instr.operands.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        out.push_str(&render_operand(op));
    }
    if let Some(bytes) = &instr.opcode_bytes {
        out.push_str(" ; !bytes");
        for b in bytes {
            let _ = write!(out, " {b:02X}");
        }
    }
    out
}

/// Render functions back into a listing document.
pub fn render_listing(functions: &[FunctionListing]) -> String {
    let mut out = String::new();
    for f in functions {
        out.push_str(".func ");
        out.push_str(&f.name);
        if let Some(t) = f.true_return_type {
            out.push_str(" ret=");
            out.push_str(t.name());
        }
        out.push('\n');
        for ins in &f.instructions {
            out.push_str("    ");
            out.push_str(&render_instruction(ins));
            out.push('\n');
        }
        out.push_str(".endfunc\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_width_is_consistent_with_name() {
        for r in Register::all() {
            let name = r.name();
            let expected = if name.starts_with("xmm") {
                128
            } else if name.starts_with("st") {
                80
            } else if name.starts_with('e') {
                32
            } else if name.ends_with('x') {
                16
            } else {
                8
            };
            assert_eq!(r.width(), expected, "{name}");
            assert_eq!(Register::from_name(&name), Some(r));
            assert_eq!(r.family().width().min(32), r.family().width().min(32));
        }
    }

    #[test]
    fn family_widens_to_32_bits() {
        assert_eq!(Register::Cx.family(), Register::Ecx);
        assert_eq!(Register::Al.family(), Register::Eax);
        assert_eq!(Register::Ah.family(), Register::Eax);
        assert_eq!(Register::Esi.family(), Register::Esi);
    }

    #[test]
    fn renders_reference_forms() {
        let i = Instruction::new("mov", vec![Operand::reg(Register::Eax), Operand::imm(5)]);
        assert_eq!(render_instruction(&i), "mov eax, 5");
        let i = Instruction::new("push", vec![Operand::new(OperandKind::AbsAddr("$SG25215".into()))]);
        assert_eq!(render_instruction(&i), "push offset $SG25215");
        let i = Instruction::new(
            "movsd",
            vec![
                Operand::reg(Register::Xmm(0)),
                Operand::new(OperandKind::DerefAddr {
                    symbol: "__real@43e2eb565391bf9e".into(),
                    segment: true,
                }),
            ],
        );
        assert_eq!(render_instruction(&i), "movsd xmm0, ds:__real@43e2eb565391bf9e");
    }

    #[test]
    fn renders_memory_forms() {
        let m = MemRef {
            base: Some(Register::Ebp),
            index: Some((Register::Eax, 2)),
            disp: Some(Disp::Sym("var_10".into())),
        };
        assert_eq!(render_mem(&m), "[ebp+eax*2+var_10]");
        let m = MemRef {
            base: Some(Register::Ebp),
            index: None,
            disp: Some(Disp::Int(-8)),
        };
        assert_eq!(render_mem(&m), "[ebp-8]");
        let m = MemRef {
            base: None,
            index: Some((Register::Ecx, 1)),
            disp: None,
        };
        assert_eq!(render_mem(&m), "[ecx*1]");
    }
}
