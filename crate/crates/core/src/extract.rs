//! Return-site (RET) and call-site (POST) chunk extraction.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::asm::{FunctionListing, Instruction, OperandKind, Register};

pub const DEFAULT_MAX_LEN: usize = 8;

/// Label prefix marking instrumented return statements; its presence switches
/// a function to anchor mode.
pub const RETURN_ANCHOR_PREFIX: &str = "__RETURN";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetChunk {
    pub function: String,
    /// Instructions before the return, oldest first, excluding the return.
    pub instructions: Vec<Instruction>,
    pub retn_index: usize,
    pub retn: Instruction,
}

impl RetChunk {
    /// Chunk instructions followed by the return instruction.
    pub fn with_return(&self) -> Vec<Instruction> {
        let mut v = self.instructions.clone();
        v.push(self.retn.clone());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostCallChunk {
    pub caller: String,
    pub callee: String,
    pub call_index: usize,
    pub call: Instruction,
    pub stack_adjust: Option<Instruction>,
    pub next_instruction: Option<Instruction>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChunkBundle {
    /// RET chunks per function, in listing order.
    pub ret: Vec<(String, Vec<RetChunk>)>,
    /// POST chunks per callee, in first-seen order.
    pub post: Vec<(String, Vec<PostCallChunk>)>,
    /// Functions that produced no RET chunk.
    pub diagnostics: Vec<String>,
}

impl ChunkBundle {
    pub fn ret_chunks(&self, function: &str) -> &[RetChunk] {
        self.ret
            .iter()
            .find(|(f, _)| f == function)
            .map(|(_, c)| c.as_slice())
            .unwrap_or(&[])
    }

    pub fn post_chunks(&self, callee: &str) -> &[PostCallChunk] {
        self.post
            .iter()
            .find(|(f, _)| f == callee)
            .map(|(_, c)| c.as_slice())
            .unwrap_or(&[])
    }
}

fn is_anchor(ins: &Instruction) -> bool {
    ins.label
        .as_deref()
        .is_some_and(|l| l.starts_with(RETURN_ANCHOR_PREFIX))
}

/// One chunk per return instruction, scanning backwards up to `max_len`
/// instructions. Window mode stops at a labeled instruction (kept), an
/// unconditional jump (dropped), another return, or the function start.
/// Anchor mode, used when the function carries `__RETURN<n>__` labels, stops
/// only at those labels, another return, or the function start.
pub fn extract_ret_chunks(func: &FunctionListing, max_len: usize) -> Vec<RetChunk> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let anchor_mode = func.instructions.iter().any(is_anchor);
    let body = &func.instructions;
    let mut chunks = Vec::new();
    for r in func.return_indices() {
        let mut taken = Vec::new();
        let mut j = r;
        while j > 0 && taken.len() < max_len {
            let ins = &body[j - 1];
            if ins.is_return() {
                break;
            }
            if anchor_mode {
                taken.push(ins.clone());
                if is_anchor(ins) {
                    break;
                }
            } else {
                if ins.is_unconditional_jump() {
                    break;
                }
                taken.push(ins.clone());
                if ins.label.is_some() {
                    break;
                }
            }
            j -= 1;
        }
        taken.reverse();
        chunks.push(RetChunk {
            function: func.name.clone(),
            instructions: taken,
            retn_index: r,
            retn: body[r].clone(),
        });
    }
    chunks
}

/// Growing suffixes of a chunk: sequence `k` holds the last `k + 1`
/// instructions plus the return.
pub fn prefix_patterns(chunk: &RetChunk) -> Vec<Vec<Instruction>> {
    let n = chunk.instructions.len();
    (1..=n)
        .map(|k| {
            let mut seq = chunk.instructions[n - k..].to_vec();
            seq.push(chunk.retn.clone());
            seq
        })
        .collect()
}

fn is_stack_adjust(ins: &Instruction) -> bool {
    ins.mnemonic == "add"
        && ins.operands.len() == 2
        && ins.operands[0].kind == OperandKind::Reg(Register::Esp)
        && matches!(ins.operands[1].kind, OperandKind::Imm(_))
}

fn post_chunks_of(func: &FunctionListing) -> Vec<PostCallChunk> {
    let body = &func.instructions;
    let mut out = Vec::new();
    for (i, callee) in func.call_sites() {
        let mut j = i + 1;
        let stack_adjust = match body.get(j) {
            Some(ins) if is_stack_adjust(ins) => {
                j += 1;
                Some(ins.clone())
            }
            _ => None,
        };
        out.push(PostCallChunk {
            caller: func.name.clone(),
            callee,
            call_index: i,
            call: body[i].clone(),
            stack_adjust,
            next_instruction: body.get(j).cloned(),
        });
    }
    out
}

/// All call-site chunks across the functions, in caller order then call
/// order. Calls to symbols outside the set are kept under the symbol name.
pub fn extract_post_call_chunks(functions: &[FunctionListing]) -> Vec<PostCallChunk> {
    functions
        .par_iter()
        .map(post_chunks_of)
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Extract every chunk and index POST chunks under their callee.
pub fn extract_bundle(functions: &[FunctionListing], max_len: usize) -> ChunkBundle {
    let ret: Vec<(String, Vec<RetChunk>)> = functions
        .par_iter()
        .map(|f| (f.name.clone(), extract_ret_chunks(f, max_len)))
        .collect();
    let diagnostics = ret
        .iter()
        .filter(|(_, c)| c.is_empty())
        .map(|(f, _)| f.clone())
        .collect();
    let mut post: Vec<(String, Vec<PostCallChunk>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for chunk in extract_post_call_chunks(functions) {
        let slot = *index.entry(chunk.callee.clone()).or_insert_with(|| {
            post.push((chunk.callee.clone(), Vec::new()));
            post.len() - 1
        });
        post[slot].1.push(chunk);
    }
    ChunkBundle { ret, post, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_instruction, parse_listing, ParseOptions};

    fn func(lines: &[&str]) -> FunctionListing {
        let body = lines
            .iter()
            .map(|l| parse_instruction(l, ParseOptions::default()).unwrap())
            .collect();
        FunctionListing::new("_f", body)
    }

    fn texts(v: &[Instruction]) -> Vec<String> {
        v.iter().map(|i| i.to_string()).collect()
    }

    #[test]
    fn backward_scan() {
        let f = func(&["mov ecx, 3", "mov edx, 2", "mov eax, 1", "retn"]);
        let c = extract_ret_chunks(&f, 8);
        assert_eq!(texts(&c[0].instructions), ["mov ecx, 3", "mov edx, 2", "mov eax, 1"]);
        let c = extract_ret_chunks(&f, 2);
        assert_eq!(texts(&c[0].instructions), ["mov edx, 2", "mov eax, 1"]);
    }

    #[test]
    fn stops_at_label_and_jump() {
        let f = func(&["mov ecx, 3", "L: mov eax, 1", "retn"]);
        assert_eq!(texts(&extract_ret_chunks(&f, 8)[0].instructions), ["L: mov eax, 1"]);
        let f = func(&["mov ecx, 3", "jmp L2", "mov eax, 1", "retn"]);
        assert_eq!(texts(&extract_ret_chunks(&f, 8)[0].instructions), ["mov eax, 1"]);
        let f = func(&["retn"]);
        assert!(extract_ret_chunks(&f, 8)[0].instructions.is_empty());
    }

    #[test]
    fn one_chunk_per_return() {
        let f = func(&["mov eax, 1", "retn", "mov eax, 2", "retn"]);
        let c = extract_ret_chunks(&f, 8);
        assert_eq!(c.len(), 2);
        assert_eq!(texts(&c[1].instructions), ["mov eax, 2"]);
        let f = func(&["mov eax, 1"]);
        assert!(extract_ret_chunks(&f, 8).is_empty());
    }

    #[test]
    fn anchor_mode_ignores_other_labels() {
        let f = func(&[
            "mov ecx, 1",
            "__RETURN1__: cmp eax, 3",
            "ja L1",
            "mov [ebp+var_10], 1",
            "jmp L2",
            "L1: mov [ebp+var_10], 0",
            "L2: mov eax, [ebp+var_10]",
            "retn",
        ]);
        let c = extract_ret_chunks(&f, 8);
        assert_eq!(c[0].instructions.len(), 6);
        assert_eq!(c[0].instructions[0].label.as_deref(), Some("__RETURN1__"));
    }

    #[test]
    fn prefixes_nest() {
        let f = func(&["mov ecx, 2", "mov eax, 1", "retn"]);
        let c = &extract_ret_chunks(&f, 8)[0];
        let p = prefix_patterns(c);
        assert_eq!(p.len(), 2);
        assert_eq!(texts(&p[0]), ["mov eax, 1", "retn"]);
        assert_eq!(texts(&p[1]), ["mov ecx, 2", "mov eax, 1", "retn"]);
        let bare = &extract_ret_chunks(&func(&["retn"]), 8)[0];
        assert!(prefix_patterns(bare).is_empty());
    }

    #[test]
    fn post_chunks_attribute_to_callee() {
        let doc = ".func _g\n call _f\n add esp, 4\n cwde\n call _proc2\n mov [ebp+var_4], eax\n call _h\n.endfunc\n.func _f\n retn\n.endfunc\n";
        let fs = parse_listing(doc, ParseOptions::default()).unwrap();
        let b = extract_bundle(&fs, 8);
        let f = b.post_chunks("_f");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].next_instruction.as_ref().unwrap().mnemonic, "cwde");
        assert!(f[0].stack_adjust.is_some());
        let p = b.post_chunks("_proc2");
        assert_eq!(
            p[0].next_instruction.as_ref().unwrap().to_string(),
            "mov [ebp+var_4], eax"
        );
        assert!(b.post_chunks("_h")[0].next_instruction.is_none());
        assert!(b.post_chunks("_g").is_empty());
        assert_eq!(b.diagnostics, vec!["_g".to_string()]);
    }
}
