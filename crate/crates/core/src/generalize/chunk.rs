use super::{generalize_instruction, segment, Element, GeneralizedPattern, PatternKind, Segment};
use crate::asm::Instruction;
use crate::extract::{PostCallChunk, RetChunk};

pub const DEFAULT_BUDGET: usize = 64;

#[derive(Clone, Copy, Debug)]
pub enum ChunkRef<'a> {
    Ret(&'a RetChunk),
    Post(&'a PostCallChunk),
}

impl ChunkRef<'_> {
    pub fn kind(&self) -> PatternKind {
        match self {
            ChunkRef::Ret(_) => PatternKind::Ret,
            ChunkRef::Post(_) => PatternKind::Post,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChunkPatterns {
    pub patterns: Vec<GeneralizedPattern>,
    /// Patterns dropped because the budget ran out.
    pub truncated: usize,
}

type Forms = Vec<(Element, String)>;

fn instruction_forms(ins: &Instruction) -> Forms {
    generalize_instruction(ins)
        .into_iter()
        .map(|g| {
            let e = Element::Instr(g);
            let s = e.to_string();
            (e, s)
        })
        .collect()
}

fn single(e: Element) -> Forms {
    let s = e.to_string();
    vec![(e, s)]
}

/// Enumerate the cross product of `slots`, framed by fixed head/tail
/// elements, into patterns.
fn product(kind: PatternKind, head: &[Element], slots: &[&Forms], tail: &[Element]) -> Vec<GeneralizedPattern> {
    let fixed_prefix: String = {
        let mut s = String::from(kind.prefix());
        for (i, e) in head.iter().enumerate() {
            s.push_str(if i == 0 { " " } else { " | " });
            s.push_str(&e.to_string());
        }
        s
    };
    let tail_names: Vec<String> = tail.iter().map(|e| e.to_string()).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; slots.len()];
    loop {
        let mut name = fixed_prefix.clone();
        let mut elements: Vec<Element> = head.to_vec();
        let mut first = head.is_empty();
        for (slot, &i) in slots.iter().zip(&idx) {
            name.push_str(if first { " " } else { " | " });
            first = false;
            name.push_str(&slot[i].1);
            elements.push(slot[i].0.clone());
        }
        for (e, n) in tail.iter().zip(&tail_names) {
            name.push_str(if first { " " } else { " | " });
            first = false;
            name.push_str(n);
            elements.push(e.clone());
        }
        out.push(GeneralizedPattern {
            kind,
            elements,
            canonical_name: name,
        });
        // Odometer increment, last slot fastest.
        let mut p = slots.len();
        loop {
            if p == 0 {
                return out;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < slots[p].len() {
                break;
            }
            idx[p] = 0;
        }
    }
}

fn product_size(slots: &[&Forms]) -> usize {
    slots.iter().fold(1usize, |acc, s| acc.saturating_mul(s.len()))
}

/// Grow patterns over `k = 0..=m` trailing (RET) or leading (POST) elements,
/// shortest first and lexicographically within a length, up to `budget`.
fn grow(kind: PatternKind, forms: &[Forms], budget: usize) -> ChunkPatterns {
    let m = forms.len();
    let mut result = ChunkPatterns::default();
    for k in 0..=m {
        let slots: Vec<&Forms> = match kind {
            PatternKind::Ret => forms[m - k..].iter().collect(),
            PatternKind::Post => forms[..k].iter().collect(),
        };
        let size = product_size(&slots);
        let room = budget - result.patterns.len();
        if room == 0 {
            result.truncated = result.truncated.saturating_add(size);
            continue;
        }
        let mut batch = match kind {
            PatternKind::Ret => product(kind, &[], &slots, &[Element::CalleeEpilogue]),
            PatternKind::Post => product(kind, &[Element::CallerEpilogue], &slots, &[]),
        };
        batch.sort_by(|a, b| a.canonical_name.cmp(&b.canonical_name));
        batch.dedup_by(|a, b| a.canonical_name == b.canonical_name);
        if batch.len() > room {
            result.truncated = result.truncated.saturating_add(batch.len() - room);
            batch.truncate(room);
        }
        result.patterns.extend(batch);
    }
    result
}

/// Generalized patterns of a chunk: macros first, then every combination of
/// per-instruction generalizations over each growth length, capped by
/// `budget` patterns.
pub fn generalize_chunk(chunk: ChunkRef<'_>, budget: usize) -> ChunkPatterns {
    match chunk {
        ChunkRef::Ret(c) => {
            let seq = c.with_return();
            let segs = segment(&seq);
            let body = &segs[..segs.len().saturating_sub(1)];
            let forms: Vec<Forms> = body
                .iter()
                .map(|s| match s {
                    Segment::Instr(i) => instruction_forms(&seq[*i]),
                    Segment::Macro(m) => single(m.element()),
                })
                .collect();
            grow(PatternKind::Ret, &forms, budget)
        }
        ChunkRef::Post(c) => {
            let forms: Vec<Forms> = c.next_instruction.iter().map(instruction_forms).collect();
            grow(PatternKind::Post, &forms, budget)
        }
    }
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

    fn names(p: &ChunkPatterns) -> Vec<String> {
        p.patterns.iter().map(|p| p.canonical_name.clone()).collect()
    }

    #[test]
    fn ret_patterns() {
        let f = func(&["mov eax, 7", "pop ebp", "retn"]);
        let c = &extract_ret_chunks(&f, 8)[0];
        let n = names(&generalize_chunk(ChunkRef::Ret(c), DEFAULT_BUDGET));
        assert_eq!(n[0], "RET: callee_epilogue");
        assert!(n.contains(&"RET: mov eax, <lit> | callee_epilogue".to_string()));
        assert!(n.contains(&"RET: mov <reg>, <lit> | callee_epilogue".to_string()));
    }

    #[test]
    fn bare_return() {
        let f = func(&["retn"]);
        let c = &extract_ret_chunks(&f, 8)[0];
        let n = names(&generalize_chunk(ChunkRef::Ret(c), DEFAULT_BUDGET));
        assert_eq!(n, vec!["RET: callee_epilogue"]);
    }

    #[test]
    fn post_patterns() {
        let f = func(&["call _f", "add esp, 4", "cwde"]);
        let c = &extract_post_call_chunks(&[f])[0];
        let n = names(&generalize_chunk(ChunkRef::Post(c), DEFAULT_BUDGET));
        assert_eq!(n, vec!["POST: caller_epilogue", "POST: caller_epilogue | cwde"]);
    }

    #[test]
    fn budget_truncates_longest_first() {
        let f = func(&[
            "mov ecx, [ebp+var_4]",
            "mov edx, [ebp+var_8]",
            "add ecx, [ebp+var_C]",
            "mov eax, [ebp+var_10]",
            "pop ebp",
            "retn",
        ]);
        let c = &extract_ret_chunks(&f, 8)[0];
        let all = generalize_chunk(ChunkRef::Ret(c), usize::MAX);
        let capped = generalize_chunk(ChunkRef::Ret(c), 10);
        assert_eq!(capped.patterns.len(), 10);
        assert_eq!(capped.truncated, all.patterns.len() - 10);
        assert_eq!(capped.patterns[..], all.patterns[..10]);
        let lens: Vec<usize> = capped.patterns.iter().map(|p| p.elements.len()).collect();
        assert!(lens.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn macro_members_not_standalone() {
        let f = func(&["mov eax, 0", "mov ebx, eax", "mov [ebp+var_8], ebx", "retn"]);
        let c = &extract_ret_chunks(&f, 8)[0];
        let n = names(&generalize_chunk(ChunkRef::Ret(c), DEFAULT_BUDGET));
        assert_eq!(
            n,
            vec![
                "RET: callee_epilogue",
                "RET: mov_chain([ebp+<lit>], ebx, eax, <lit>) | callee_epilogue"
            ]
        );
    }
}
