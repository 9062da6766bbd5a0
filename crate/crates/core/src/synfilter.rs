//! Syntactic false-positive rules over comment updates.
//!
//! A positive case whose comment change is only a typo fix, a casing change,
//! a stopword edit or an inflectional variant does not witness a real
//! inconsistency and is removed. The four predicates are written to be
//! mutually exclusive, so each trivial change is attributed to exactly one
//! rule.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{CciCase, Corpus};
use crate::diffscript::{comment_word_diff, ChangedPair};
use crate::lexing::{code_vocabulary, tokenize_code, tokenize_comment, TokenSeq};

pub const STOPWORDS: [&str; 7] = ["a", "an", "the", "in", "on", "at", "by"];

/// Largest edit distance still treated as a typo.
pub const TYPO_MAX_DISTANCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterRule {
    TypoFix,
    CaseChange,
    StopwordChange,
    LexicalChange,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub rule: FilterRule,
    pub evidence: Vec<ChangedPair>,
}

impl FilterVerdict {
    pub fn none() -> Self {
        FilterVerdict {
            rule: FilterRule::None,
            evidence: Vec::new(),
        }
    }
}

/// Unit-cost Levenshtein distance over `char`s.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const IRREGULAR: &[(&str, &str)] = &[
    ("am", "be"),
    ("are", "be"),
    ("is", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("has", "have"),
    ("had", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("goes", "go"),
    ("went", "go"),
    ("gone", "go"),
    ("made", "make"),
    ("got", "get"),
    ("gotten", "get"),
    ("took", "take"),
    ("taken", "take"),
    ("gave", "give"),
    ("given", "give"),
    ("found", "find"),
    ("built", "build"),
    ("sent", "send"),
    ("kept", "keep"),
    ("left", "leave"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("wrote", "write"),
    ("written", "write"),
    ("ran", "run"),
    ("began", "begin"),
    ("begun", "begin"),
    ("chose", "choose"),
    ("chosen", "choose"),
    ("held", "hold"),
    ("met", "meet"),
    ("sold", "sell"),
    ("told", "tell"),
    ("thought", "think"),
    ("brought", "bring"),
    ("bought", "buy"),
    ("caught", "catch"),
    ("taught", "teach"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("people", "person"),
    ("indices", "index"),
    ("vertices", "vertex"),
    ("matrices", "matrix"),
    ("used", "use"),
];

const ING_EXCEPTIONS: &[&str] = &[
    "during",
    "nothing",
    "something",
    "anything",
    "everything",
    "morning",
    "evening",
    "ceiling",
];

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel-consonant sequences, `m` in `[C](VC)^m[V]`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let vowel = !is_consonant(w, i);
        if prev_vowel && !vowel {
            m += 1;
        }
        prev_vowel = vowel;
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn repair_verb_stem(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if stem.ends_with("at") || stem.ends_with("bl") || stem.ends_with("iz") {
        let mut s = stem.to_string();
        s.push('e');
        return s;
    }
    if n >= 2 && b[n - 1] == b[n - 2] && is_consonant(b, n - 1) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        // doubling only undone for one-syllable stems (running -> run)
        if measure(&b[..n - 1]) == 1 {
            return stem[..n - 1].to_string();
        }
        return stem.to_string();
    }
    if measure(b) == 1 && ends_cvc(b) {
        let mut s = stem.to_string();
        s.push('e');
        return s;
    }
    stem.to_string()
}

/// Rule-based English lemma for a lowercase word.
///
/// Handles plural and verb suffixes with a fixed suffix table and a small
/// irregular-form map. Non-ASCII words are returned unchanged.
pub fn lemmatize(word: &str) -> String {
    if let Some(&(_, lemma)) = IRREGULAR.iter().find(|(w, _)| *w == word) {
        return lemma.to_string();
    }
    if !word.is_ascii() || word.len() <= 3 {
        return word.to_string();
    }
    let n = word.len();
    if word.ends_with("ies") {
        return if n > 4 {
            let mut s = word[..n - 3].to_string();
            s.push('y');
            s
        } else {
            word[..n - 1].to_string()
        };
    }
    if word.ends_with("sses") {
        return word[..n - 2].to_string();
    }
    if ["xes", "zes", "ches", "shes"].iter().any(|s| word.ends_with(s)) {
        return word[..n - 2].to_string();
    }
    if word.ends_with('s') {
        if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
            return word.to_string();
        }
        return word[..n - 1].to_string();
    }
    if word.ends_with("ied") && n > 4 {
        let mut s = word[..n - 3].to_string();
        s.push('y');
        return s;
    }
    if word.ends_with("eed") {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if has_vowel(stem.as_bytes()) {
            return repair_verb_stem(stem);
        }
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if ING_EXCEPTIONS.contains(&word) || stem.len() < 2 || !has_vowel(stem.as_bytes()) {
            return word.to_string();
        }
        return repair_verb_stem(stem);
    }
    word.to_string()
}

fn lower(s: &str) -> String {
    s.to_lowercase()
}

/// Pairs with both sides present, or `None` if any pair is a pure
/// insertion or deletion.
fn substitutions(pairs: &[ChangedPair]) -> Option<Vec<(&str, &str)>> {
    pairs
        .iter()
        .map(|(o, n)| Some((o.as_deref()?, n.as_deref()?)))
        .collect()
}

pub fn is_typo_fix(old_c: &TokenSeq, new_c: &TokenSeq, old_code_vocab: &BTreeSet<String>) -> bool {
    let diff = comment_word_diff(old_c, new_c);
    let Some(subs) = substitutions(&diff.changed) else {
        return false;
    };
    let [(old, new)] = subs.as_slice() else {
        return false;
    };
    let (lo, ln) = (lower(old), lower(new));
    let distance = levenshtein(&lo, &ln);
    (1..=TYPO_MAX_DISTANCE).contains(&distance)
        && lemmatize(&lo) != lemmatize(&ln)
        && !old_code_vocab.contains(&lo)
        && !is_stopword_change(old_c, new_c)
}

pub fn is_case_change(old_c: &TokenSeq, new_c: &TokenSeq, old_code_vocab: &BTreeSet<String>) -> bool {
    let diff = comment_word_diff(old_c, new_c);
    let Some(subs) = substitutions(&diff.changed) else {
        return false;
    };
    !subs.is_empty()
        && subs.iter().all(|(old, new)| {
            let lo = lower(old);
            old != new && lo == lower(new) && !old_code_vocab.contains(&lo)
        })
}

fn counts(seq: &TokenSeq) -> BTreeMap<String, i64> {
    let mut m = BTreeMap::new();
    for t in &seq.tokens {
        *m.entry(lower(t)).or_insert(0) += 1;
    }
    m
}

pub fn is_stopword_change(old_c: &TokenSeq, new_c: &TokenSeq) -> bool {
    let mut delta = counts(old_c);
    for (w, c) in counts(new_c) {
        *delta.entry(w).or_insert(0) -= c;
    }
    let changed: Vec<&String> = delta.iter().filter(|(_, c)| **c != 0).map(|(w, _)| w).collect();
    !changed.is_empty() && changed.iter().all(|w| STOPWORDS.contains(&w.as_str()))
}

pub fn is_lexical_change(old_c: &TokenSeq, new_c: &TokenSeq, old_code_vocab: &BTreeSet<String>) -> bool {
    let diff = comment_word_diff(old_c, new_c);
    let Some(subs) = substitutions(&diff.changed) else {
        return false;
    };
    !subs.is_empty()
        && subs.iter().all(|(old, new)| {
            let (lo, ln) = (lower(old), lower(new));
            lo != ln && lemmatize(&lo) == lemmatize(&ln) && !old_code_vocab.contains(&lo)
        })
}

/// Evaluates the rules in order TypoFix, CaseChange, StopwordChange,
/// LexicalChange and returns the first match.
pub fn classify_comment_change(old_comment: &str, new_comment: &str, old_code: &str) -> FilterVerdict {
    let old_c = tokenize_comment(old_comment);
    let new_c = tokenize_comment(new_comment);
    let vocab = code_vocabulary(&tokenize_code(old_code));
    let rule = if is_typo_fix(&old_c, &new_c, &vocab) {
        FilterRule::TypoFix
    } else if is_case_change(&old_c, &new_c, &vocab) {
        FilterRule::CaseChange
    } else if is_stopword_change(&old_c, &new_c) {
        FilterRule::StopwordChange
    } else if is_lexical_change(&old_c, &new_c, &vocab) {
        FilterRule::LexicalChange
    } else {
        return FilterVerdict::none();
    };
    FilterVerdict {
        rule,
        evidence: comment_word_diff(&old_c, &new_c).changed,
    }
}

pub fn classify_case(case: &CciCase) -> FilterVerdict {
    match &case.new_comment {
        Some(new) => classify_comment_change(&case.old_comment, new, &case.old_code),
        None => FilterVerdict::none(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedCase {
    pub id: String,
    pub verdict: FilterVerdict,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub typo_fix: usize,
    pub case_change: usize,
    pub stopword_change: usize,
    pub lexical_change: usize,
    pub removed: Vec<RemovedCase>,
}

impl FilterReport {
    pub fn total_removed(&self) -> usize {
        self.typo_fix + self.case_change + self.stopword_change + self.lexical_change
    }
}

/// Removes positive cases whose comment update is a trivial syntactic change.
/// Negative cases always pass through.
pub fn apply_syntactic_filters(corpus: &Corpus) -> (Corpus, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::with_capacity(corpus.cases.len());
    for case in &corpus.cases {
        if !case.is_positive() {
            kept.push(case.clone());
            continue;
        }
        let verdict = classify_case(case);
        let slot = match verdict.rule {
            FilterRule::TypoFix => &mut report.typo_fix,
            FilterRule::CaseChange => &mut report.case_change,
            FilterRule::StopwordChange => &mut report.stopword_change,
            FilterRule::LexicalChange => &mut report.lexical_change,
            FilterRule::None => {
                kept.push(case.clone());
                continue;
            }
        };
        *slot += 1;
        report.removed.push(RemovedCase {
            id: case.id.clone(),
            verdict,
        });
    }
    (
        Corpus {
            cases: kept,
            source_path: corpus.source_path.clone(),
        },
        report,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn c(s: &str) -> TokenSeq {
        tokenize_comment(s)
    }

    fn vocab(code: &str) -> BTreeSet<String> {
        code_vocabulary(&tokenize_code(code))
    }

    /// Full-table edit distance, kept separate from the two-row version.
    fn levenshtein_table(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein_table("interpretting", "interpreting"), 1);
        assert_eq!(levenshtein("interpretting", "interpreting"), 1);
        assert_eq!(levenshtein("word", "word"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        for (a, b) in [("kitten", "sitting"), ("flaw", "lawn"), ("DBObject", "Document"), ("a", "the")] {
            assert_eq!(levenshtein(a, b), levenshtein_table(a, b), "{a} {b}");
        }
    }

    #[test]
    fn lemma_vectors() {
        let vectors = [
            ("checks", "check"),
            ("running", "run"),
            ("check", "check"),
            ("entries", "entry"),
            ("classes", "class"),
            ("matches", "match"),
            ("created", "create"),
            ("stopped", "stop"),
            ("returned", "return"),
            ("making", "make"),
            ("status", "status"),
            ("this", "this"),
            ("string", "string"),
            ("during", "during"),
            ("applied", "apply"),
            ("initialized", "initialize"),
            ("interpreting", "interpret"),
            ("interpretting", "interprett"),
            ("was", "be"),
            ("children", "child"),
            ("opened", "open"),
            ("ties", "tie"),
        ];
        for (word, lemma) in vectors {
            assert_eq!(lemmatize(word), lemma, "{word}");
        }
    }

    #[test]
    fn typo_rule() {
        let old = c("Returns the result of interpretting the object.");
        let new = c("Returns the result of interpreting the object.");
        assert!(is_typo_fix(&old, &new, &vocab("Object f(Dial d) { return d; }")));
        assert!(!is_typo_fix(&c("a big cat"), &c("a bog cot"), &BTreeSet::new()));
        assert!(!is_typo_fix(&c("uses nmae"), &c("uses name"), &vocab("String nmae;")));
    }

    #[test]
    fn case_rule() {
        let empty = BTreeSet::new();
        assert!(is_case_change(&c("Returns The Value"), &c("returns the value"), &empty));
        assert!(!is_case_change(&c("the DBObject"), &c("the Document"), &empty));
        assert!(!is_case_change(&c("the Value"), &c("the value"), &vocab("int value;")));
        assert!(!is_case_change(&c("same"), &c("same"), &empty));
    }

    #[test]
    fn stopword_rule() {
        assert!(is_stopword_change(
            &c("Provides a string representation"),
            &c("Provides the string representation")
        ));
        assert!(is_stopword_change(&c("set on load"), &c("set load")));
        assert!(!is_stopword_change(&c("the dog"), &c("the dog cat")));
        assert!(!is_stopword_change(&c("x y"), &c("x y")));
    }

    #[test]
    fn lexical_rule() {
        let empty = BTreeSet::new();
        assert!(is_lexical_change(
            &c("Check if specified address"),
            &c("Checks if specified address"),
            &empty
        ));
        assert!(!is_lexical_change(&c("the list"), &c("the collection"), &empty));
        assert!(!is_lexical_change(&c("Checks"), &c("Checks"), &empty));
    }

    #[test]
    fn rules_are_exclusive_on_reference_examples() {
        let pairs = [
            (
                "Returns the result of interpretting the object as an instance of `Dial Region'.",
                "Returns the result of interpreting the object as an instance of `Dial Region'.",
                FilterRule::TypoFix,
            ),
            (
                "Provides a string representation of the property.",
                "Provides the string representation of the property.",
                FilterRule::StopwordChange,
            ),
            (
                "Check if specified address is allowed by current IPAccess rules.",
                "Checks if specified address is allowed by current IPAccess rules.",
                FilterRule::LexicalChange,
            ),
            ("Returns The Cached Value.", "Returns the cached value.", FilterRule::CaseChange),
        ];
        let empty = BTreeSet::new();
        for (old, new, expected) in pairs {
            let (o, n) = (c(old), c(new));
            let fired: Vec<FilterRule> = [
                (is_typo_fix(&o, &n, &empty), FilterRule::TypoFix),
                (is_case_change(&o, &n, &empty), FilterRule::CaseChange),
                (is_stopword_change(&o, &n), FilterRule::StopwordChange),
                (is_lexical_change(&o, &n, &empty), FilterRule::LexicalChange),
            ]
            .into_iter()
            .filter_map(|(hit, r)| hit.then_some(r))
            .collect();
            assert_eq!(fired, vec![expected], "{old}");
        }
    }

    #[test]
    fn filter_keeps_negatives_and_real_changes() {
        use crate::corpus::{CommentType, Label};
        let code = "public DBObject getQueryObject() { return query; }";
        let real = CciCase::new("real", CommentType::Return, "@return the DBObject", code, "public Document getQueryObject() { return query; }")
            .with_new_comment("@return the Document")
            .with_label(Label::Inconsistent);
        let neg = CciCase::new("neg", CommentType::Summary, "Check if x", "void f() {}", "void g() {}")
            .with_new_comment("Checks if x")
            .with_label(Label::Consistent);
        let typo = CciCase::new("typo", CommentType::Summary, "Recieves data", "void f() {}", "void g() {}")
            .with_new_comment("Receives data")
            .with_label(Label::Inconsistent);
        let corpus = Corpus::new(vec![real, neg, typo]).unwrap();
        let (out, report) = apply_syntactic_filters(&corpus);
        assert_eq!(out.ids().into_iter().collect::<Vec<_>>(), vec!["neg", "real"]);
        assert_eq!(report.typo_fix, 1);
        assert_eq!(report.total_removed(), report.removed.len());
        let (again, report2) = apply_syntactic_filters(&out);
        assert_eq!(again, out);
        assert_eq!(report2.total_removed(), 0);
    }
}
