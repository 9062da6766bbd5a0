//! Java-flavoured code lexer, comment word splitter and identifier splitting.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Code,
    Comment,
}

/// An ordered token list. Tokens are never empty and never contain whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub kind: TokenKind,
}

impl TokenSeq {
    pub fn new(kind: TokenKind, tokens: Vec<String>) -> Self {
        debug_assert!(tokens
            .iter()
            .all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        TokenSeq { tokens, kind }
    }

    pub fn code<S: AsRef<str>>(tokens: &[S]) -> Self {
        Self::new(
            TokenKind::Code,
            tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        )
    }

    pub fn comment<S: AsRef<str>>(tokens: &[S]) -> Self {
        Self::new(
            TokenKind::Comment,
            tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens joined with single spaces.
    pub fn render(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LexWarning {
    UnterminatedString { offset: usize },
    UnterminatedChar { offset: usize },
    UnterminatedComment { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexed {
    pub seq: TokenSeq,
    pub warnings: Vec<LexWarning>,
}

// Longest first; maximal munch picks the first prefix that matches.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "==", "!=", "<=", ">=", "&&", "||", "++",
    "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric()
}

/// Whitespace inside a literal is written as an escape so the literal stays a
/// single whitespace-free token.
fn push_literal_char(out: &mut String, c: char) {
    match c {
        ' ' => out.push_str("\\s"),
        '\t' => out.push_str("\\t"),
        '\n' => out.push_str("\\n"),
        '\r' => out.push_str("\\r"),
        c if c.is_whitespace() => {
            out.push_str(&alloc::format!("\\u{:04x}", c as u32));
        }
        c => out.push(c),
    }
}

/// Lexes method source into code tokens, dropping comments.
pub fn tokenize_code(raw: &str) -> TokenSeq {
    lex_code(raw).seq
}

/// [`tokenize_code`] with the warning channel exposed.
pub fn lex_code(raw: &str) -> Lexed {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let n = chars.len();
    let mut tokens = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0;
    let at = |i: usize| chars.get(i).map(|&(_, c)| c);

    while i < n {
        let (offset, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        // comments
        if c == '/' && at(i + 1) == Some('/') {
            while i < n && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && at(i + 1) == Some('*') {
            i += 2;
            loop {
                if i >= n {
                    warnings.push(LexWarning::UnterminatedComment { offset });
                    break;
                }
                if chars[i].1 == '*' && at(i + 1) == Some('/') {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let mut tok = String::new();
            tok.push(c);
            i += 1;
            let mut closed = false;
            while i < n {
                let ch = chars[i].1;
                if ch == '\\' && i + 1 < n {
                    tok.push(ch);
                    push_literal_char(&mut tok, chars[i + 1].1);
                    i += 2;
                    continue;
                }
                push_literal_char(&mut tok, ch);
                i += 1;
                if ch == c {
                    closed = true;
                    break;
                }
            }
            if !closed {
                warnings.push(if c == '"' {
                    LexWarning::UnterminatedString { offset }
                } else {
                    LexWarning::UnterminatedChar { offset }
                });
            }
            tokens.push(tok);
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < n && is_ident_continue(chars[i].1) {
                i += 1;
            }
            tokens.push(chars[start..i].iter().map(|&(_, c)| c).collect());
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && at(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            i = scan_number(&chars, i);
            tokens.push(chars[start..i].iter().map(|&(_, c)| c).collect());
            continue;
        }
        let rest = &raw[offset..];
        if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            tokens.push((*op).to_string());
            i += op.len();
            continue;
        }
        tokens.push(c.to_string());
        i += 1;
    }

    Lexed {
        seq: TokenSeq::new(TokenKind::Code, tokens),
        warnings,
    }
}

fn scan_number(chars: &[(usize, char)], mut i: usize) -> usize {
    let n = chars.len();
    let at = |i: usize| chars.get(i).map(|&(_, c)| c);
    if at(i) == Some('0') && matches!(at(i + 1), Some('x' | 'X' | 'b' | 'B')) {
        i += 2;
        while i < n && (chars[i].1.is_ascii_hexdigit() || chars[i].1 == '_') {
            i += 1;
        }
    } else {
        while i < n && (chars[i].1.is_ascii_digit() || chars[i].1 == '_') {
            i += 1;
        }
        if at(i) == Some('.') && at(i + 1).is_some_and(|d| d.is_ascii_digit()) {
            i += 1;
            while i < n && (chars[i].1.is_ascii_digit() || chars[i].1 == '_') {
                i += 1;
            }
        }
        if matches!(at(i), Some('e' | 'E')) {
            let mut j = i + 1;
            if matches!(at(j), Some('+' | '-')) {
                j += 1;
            }
            if at(j).is_some_and(|d| d.is_ascii_digit()) {
                i = j;
                while i < n && chars[i].1.is_ascii_digit() {
                    i += 1;
                }
            }
        }
    }
    if matches!(at(i), Some('l' | 'L' | 'f' | 'F' | 'd' | 'D')) {
        i += 1;
    }
    i
}

/// Splits a comment into words, removing Javadoc furniture.
///
/// Surrounding punctuation is trimmed from each word except for `@`-tags,
/// which are kept whole. Case is preserved.
pub fn tokenize_comment(raw: &str) -> TokenSeq {
    let mut words = Vec::new();
    for line in raw.lines() {
        let mut line = line.trim();
        for prefix in ["/**", "/*", "//"] {
            if let Some(rest) = line.strip_prefix(prefix) {
                line = rest;
                break;
            }
        }
        line = line.trim_end();
        if let Some(rest) = line.strip_suffix("*/") {
            line = rest;
        }
        let line = line.trim_start().trim_start_matches('*');
        for word in line.split_whitespace() {
            if word.starts_with('@') {
                words.push(word.to_string());
                continue;
            }
            let trimmed = word.trim_matches(|c: char| c.is_ascii_punctuation());
            if !trimmed.is_empty() {
                words.push(trimmed.to_string());
            }
        }
    }
    TokenSeq::new(TokenKind::Comment, words)
}

/// Splits an identifier at camelCase, digit and separator boundaries;
/// returns lowercase parts.
pub fn split_subtokens(identifier: &str) -> Vec<String> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Lower,
        Upper,
        Digit,
        Other,
    }
    let class = |c: char| {
        if c.is_numeric() {
            Class::Digit
        } else if c.is_uppercase() {
            Class::Upper
        } else if c.is_alphabetic() {
            Class::Lower
        } else {
            Class::Other
        }
    };

    let chars: Vec<char> = identifier.chars().collect();
    let mut parts: Vec<String> = Vec::new();
    let mut current = String::new();
    for (idx, &c) in chars.iter().enumerate() {
        let cls = class(c);
        if cls == Class::Other {
            if !current.is_empty() {
                parts.push(core::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = idx.checked_sub(1).and_then(|p| chars.get(p)) {
            let prev_cls = class(prev);
            let next_lower = chars.get(idx + 1).is_some_and(|&n| class(n) == Class::Lower);
            let boundary = match (prev_cls, cls) {
                (Class::Lower, Class::Upper) => true,
                (Class::Upper, Class::Upper) => next_lower,
                (Class::Digit, Class::Lower | Class::Upper) => true,
                (Class::Lower | Class::Upper, Class::Digit) => true,
                _ => false,
            };
            if boundary && !current.is_empty() {
                parts.push(core::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        parts.push(current);
    }
    parts
}

/// Lowercased code tokens together with their identifier subtokens.
///
/// This is the membership set for the "word is not in the old code" guards.
pub fn code_vocabulary(code: &TokenSeq) -> BTreeSet<String> {
    let mut vocab = BTreeSet::new();
    for tok in &code.tokens {
        vocab.insert(tok.to_lowercase());
        if tok.chars().next().is_some_and(is_ident_start) {
            vocab.extend(split_subtokens(tok));
        }
    }
    vocab
}
