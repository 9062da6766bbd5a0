//! Matching blocks and the add/del/keep/replace edit-script representation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lexing::{TokenKind, TokenSeq};

pub const ADD: &str = "<Add>";
pub const ADD_END: &str = "<AddEnd>";
pub const DEL: &str = "<Del>";
pub const DEL_END: &str = "<DelEnd>";
pub const KEEP: &str = "<Keep>";
pub const KEEP_END: &str = "<KeepEnd>";
pub const REPLACE_OLD: &str = "<ReplaceOld>";
pub const REPLACE_NEW: &str = "<ReplaceNew>";
pub const REPLACE_END: &str = "<ReplaceEnd>";

/// Reserved marker vocabulary in a fixed order.
pub const MARKERS: [&str; 9] = [
    ADD,
    ADD_END,
    DEL,
    DEL_END,
    KEEP,
    KEEP_END,
    REPLACE_OLD,
    REPLACE_NEW,
    REPLACE_END,
];

pub fn is_marker(token: &str) -> bool {
    MARKERS.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditSpan {
    Add(Vec<String>),
    Del(Vec<String>),
    Keep(Vec<String>),
    Replace(Vec<String>, Vec<String>),
}

impl EditSpan {
    fn kind(&self) -> u8 {
        match self {
            EditSpan::Add(_) => 0,
            EditSpan::Del(_) => 1,
            EditSpan::Keep(_) => 2,
            EditSpan::Replace(..) => 3,
        }
    }

    pub fn old_side(&self) -> &[String] {
        match self {
            EditSpan::Del(t) | EditSpan::Keep(t) | EditSpan::Replace(t, _) => t,
            EditSpan::Add(_) => &[],
        }
    }

    pub fn new_side(&self) -> &[String] {
        match self {
            EditSpan::Add(t) | EditSpan::Keep(t) | EditSpan::Replace(_, t) => t,
            EditSpan::Del(_) => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub spans: Vec<EditSpan>,
    pub old_len: usize,
    pub new_len: usize,
}

impl EditScript {
    pub fn old_tokens(&self) -> Vec<String> {
        self.spans.iter().flat_map(|s| s.old_side().iter().cloned()).collect()
    }

    pub fn new_tokens(&self) -> Vec<String> {
        self.spans.iter().flat_map(|s| s.new_side().iter().cloned()).collect()
    }

    /// Checks the structural invariants: non-empty span bodies, maximal spans
    /// and length bookkeeping.
    pub fn is_well_formed(&self) -> bool {
        let bodies_ok = self.spans.iter().all(|s| match s {
            EditSpan::Replace(a, b) => !a.is_empty() && !b.is_empty(),
            EditSpan::Add(t) | EditSpan::Del(t) | EditSpan::Keep(t) => !t.is_empty(),
        });
        let maximal = self.spans.windows(2).all(|w| w[0].kind() != w[1].kind());
        bodies_ok
            && maximal
            && self.old_tokens().len() == self.old_len
            && self.new_tokens().len() == self.new_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffError {
    #[error("token `{0}` collides with an edit marker")]
    MarkerCollision(String),
    #[error("old sequence does not match the script's old side")]
    OldMismatch,
    #[error("malformed rendered script at token {0}")]
    Malformed(usize),
}

/// A run of `len` equal tokens at `a[a_start..]` and `b[b_start..]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

impl From<(usize, usize, usize)> for Block {
    fn from((a_start, b_start, len): (usize, usize, usize)) -> Self {
        Block { a_start, b_start, len }
    }
}

fn longest_match<T: PartialEq>(
    a: &[T],
    b: &[T],
    (alo, ahi): (usize, usize),
    (blo, bhi): (usize, usize),
) -> Block {
    let width = bhi - blo;
    // next[j] = length of the common run starting at (i + 1, blo + j)
    let mut next = alloc::vec![0usize; width + 1];
    let mut row = alloc::vec![0usize; width + 1];
    let mut best = Block {
        a_start: alo,
        b_start: blo,
        len: 0,
    };
    for i in (alo..ahi).rev() {
        for j in (0..width).rev() {
            row[j] = if a[i] == b[blo + j] { next[j + 1] + 1 } else { 0 };
        }
        for (j, &len) in row.iter().enumerate().take(width) {
            // i descends, so an equal-length run found now starts earlier in `a`
            if len > best.len || (len == best.len && len > 0 && (i, blo + j) < (best.a_start, best.b_start)) {
                best = Block {
                    a_start: i,
                    b_start: blo + j,
                    len,
                };
            }
        }
        core::mem::swap(&mut row, &mut next);
    }
    best
}

/// Longest-block-first recursive matching.
///
/// At each step the longest common run is chosen (ties: smallest `a_start`,
/// then smallest `b_start`) and both flanks are matched recursively. Adjacent
/// runs are merged and a zero-length sentinel `(a.len(), b.len(), 0)` closes
/// the list.
pub fn matching_blocks<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Block> {
    let mut stack = alloc::vec![((0, a.len()), (0, b.len()))];
    let mut found = Vec::new();
    while let Some((ar, br)) = stack.pop() {
        if ar.0 >= ar.1 || br.0 >= br.1 {
            continue;
        }
        let m = longest_match(a, b, ar, br);
        if m.len == 0 {
            continue;
        }
        found.push(m);
        stack.push(((ar.0, m.a_start), (br.0, m.b_start)));
        stack.push(((m.a_start + m.len, ar.1), (m.b_start + m.len, br.1)));
    }
    found.sort_by_key(|m| (m.a_start, m.b_start));

    let mut merged: Vec<Block> = Vec::with_capacity(found.len() + 1);
    for m in found {
        match merged.last_mut() {
            Some(last) if last.a_start + last.len == m.a_start && last.b_start + last.len == m.b_start => {
                last.len += m.len;
            }
            _ => merged.push(m),
        }
    }
    merged.push(Block {
        a_start: a.len(),
        b_start: b.len(),
        len: 0,
    });
    merged
}

/// Converts matching blocks into maximal Keep/Del/Add/Replace spans.
pub fn build_edit_script(old: &TokenSeq, new: &TokenSeq) -> EditScript {
    let a = old.as_slice();
    let b = new.as_slice();
    let mut spans = Vec::new();
    let (mut i, mut j) = (0, 0);
    for block in matching_blocks(a, b) {
        let old_gap = &a[i..block.a_start];
        let new_gap = &b[j..block.b_start];
        match (old_gap.is_empty(), new_gap.is_empty()) {
            (false, false) => spans.push(EditSpan::Replace(old_gap.to_vec(), new_gap.to_vec())),
            (false, true) => spans.push(EditSpan::Del(old_gap.to_vec())),
            (true, false) => spans.push(EditSpan::Add(new_gap.to_vec())),
            (true, true) => {}
        }
        if block.len > 0 {
            spans.push(EditSpan::Keep(
                a[block.a_start..block.a_start + block.len].to_vec(),
            ));
        }
        i = block.a_start + block.len;
        j = block.b_start + block.len;
    }
    EditScript {
        spans,
        old_len: a.len(),
        new_len: b.len(),
    }
}

/// Flattens a script into marker-delimited tokens.
pub fn render_edit_script(script: &EditScript) -> Result<TokenSeq, DiffError> {
    fn push_body(out: &mut Vec<String>, body: &[String]) -> Result<(), DiffError> {
        if let Some(t) = body.iter().find(|t| is_marker(t)) {
            return Err(DiffError::MarkerCollision(t.clone()));
        }
        out.extend(body.iter().cloned());
        Ok(())
    }

    let mut out = Vec::new();
    for span in &script.spans {
        let (open, body, close) = match span {
            EditSpan::Add(body) => (ADD, body, ADD_END),
            EditSpan::Del(body) => (DEL, body, DEL_END),
            EditSpan::Keep(body) => (KEEP, body, KEEP_END),
            EditSpan::Replace(old, new) => {
                out.push(REPLACE_OLD.to_string());
                push_body(&mut out, old)?;
                (REPLACE_NEW, new, REPLACE_END)
            }
        };
        out.push(open.to_string());
        push_body(&mut out, body)?;
        out.push(close.to_string());
    }
    Ok(TokenSeq::new(TokenKind::Code, out))
}

/// Inverse of [`render_edit_script`].
pub fn parse_rendered(rendered: &TokenSeq) -> Result<EditScript, DiffError> {
    let toks = rendered.as_slice();
    let mut spans = Vec::new();
    let mut i = 0;
    let take_until = |i: &mut usize, end: &str| -> Result<Vec<String>, DiffError> {
        let start = *i;
        while *i < toks.len() && toks[*i] != end {
            if is_marker(&toks[*i]) {
                return Err(DiffError::Malformed(*i));
            }
            *i += 1;
        }
        if *i >= toks.len() || *i == start {
            return Err(DiffError::Malformed(*i));
        }
        let body = toks[start..*i].to_vec();
        *i += 1;
        Ok(body)
    };
    while i < toks.len() {
        let open = toks[i].as_str();
        i += 1;
        let span = match open {
            ADD => EditSpan::Add(take_until(&mut i, ADD_END)?),
            DEL => EditSpan::Del(take_until(&mut i, DEL_END)?),
            KEEP => EditSpan::Keep(take_until(&mut i, KEEP_END)?),
            REPLACE_OLD => {
                let old = take_until(&mut i, REPLACE_NEW)?;
                let new = take_until(&mut i, REPLACE_END)?;
                EditSpan::Replace(old, new)
            }
            _ => return Err(DiffError::Malformed(i - 1)),
        };
        spans.push(span);
    }
    let mut script = EditScript {
        spans,
        old_len: 0,
        new_len: 0,
    };
    script.old_len = script.old_tokens().len();
    script.new_len = script.new_tokens().len();
    Ok(script)
}

/// Replays a script over `old`, returning the new-side tokens.
pub fn apply_edit_script(script: &EditScript, old: &TokenSeq) -> Result<TokenSeq, DiffError> {
    if script.old_tokens() != old.tokens {
        return Err(DiffError::OldMismatch);
    }
    Ok(TokenSeq::new(old.kind, script.new_tokens()))
}

/// Word pairs `(deleted, inserted)` aligned positionally within each
/// non-matching gap; an unpaired side is `None`.
pub type ChangedPair = (Option<String>, Option<String>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordDiff {
    pub changed: Vec<ChangedPair>,
    pub unchanged: usize,
}

pub fn comment_word_diff(old: &TokenSeq, new: &TokenSeq) -> WordDiff {
    let a = old.as_slice();
    let b = new.as_slice();
    let mut changed = Vec::new();
    let mut unchanged = 0;
    let (mut i, mut j) = (0, 0);
    for block in matching_blocks(a, b) {
        let old_gap = &a[i..block.a_start];
        let new_gap = &b[j..block.b_start];
        for k in 0..old_gap.len().max(new_gap.len()) {
            changed.push((old_gap.get(k).cloned(), new_gap.get(k).cloned()));
        }
        unchanged += block.len;
        i = block.a_start + block.len;
        j = block.b_start + block.len;
    }
    WordDiff { changed, unchanged }
}
