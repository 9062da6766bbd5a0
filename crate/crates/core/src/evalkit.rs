//! Text metrics for comment repair and classification metrics for detection.
//!
//! All text metrics work on lowercased token slices; see [`metric_tokens`].
//! METEOR's stem stage takes the stemmer as an argument so this crate stays
//! free of language resources.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::lexing::tokenize_comment;

/// Comment tokenizer followed by lowercasing.
pub fn metric_tokens(text: &str) -> Vec<String> {
    tokenize_comment(text)
        .tokens
        .into_iter()
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub case_id: String,
    pub source: Vec<String>,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

impl ScoredPair {
    pub fn from_text(case_id: impl Into<String>, source: &str, candidate: &str, reference: &str) -> Result<Self, MetricError> {
        let pair = ScoredPair {
            case_id: case_id.into(),
            source: metric_tokens(source),
            candidate: metric_tokens(candidate),
            reference: metric_tokens(reference),
        };
        if pair.reference.is_empty() {
            return Err(MetricError::EmptyReference(pair.case_id));
        }
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("empty reference for `{0}`")]
    EmptyReference(String),
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no items to score")]
    Empty,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn ngram_set(tokens: &[String], n: usize) -> BTreeSet<&[String]> {
    ngram_counts(tokens, n).into_keys().collect()
}

fn clipped_matches(cand: &BTreeMap<&[String], usize>, reference: &BTreeMap<&[String], usize>) -> usize {
    cand.iter()
        .map(|(g, c)| (*c).min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c < r {
        libm::exp(1.0 - r as f64 / c as f64)
    } else {
        1.0
    }
}

/// Geometric mean of four (numerator, denominator) precisions with the
/// add-one rule for empty orders n >= 2.
fn smoothed_geo_mean(parts: &[(usize, usize); 4]) -> f64 {
    let mut log_sum = 0.0;
    for (i, &(num, den)) in parts.iter().enumerate() {
        let (num, den) = if i > 0 && num == 0 { (1, den + 1) } else { (num, den) };
        if num == 0 || den == 0 {
            return 0.0;
        }
        log_sum += libm::log(num as f64 / den as f64);
    }
    libm::exp(log_sum / 4.0)
}

pub fn bleu4(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut parts = [(0, 0); 4];
    for (i, part) in parts.iter_mut().enumerate() {
        let c = ngram_counts(candidate, i + 1);
        let r = ngram_counts(reference, i + 1);
        *part = (clipped_matches(&c, &r), c.values().sum());
    }
    brevity_penalty(candidate.len(), reference.len()) * smoothed_geo_mean(&parts)
}

/// Single-reference GLEU: BLEU where candidate n-grams that appear in the
/// source but not the reference count against the numerator.
pub fn gleu(source: &[String], candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut parts = [(0, 0); 4];
    for (i, part) in parts.iter_mut().enumerate() {
        let n = i + 1;
        let c = ngram_counts(candidate, n);
        let r = ngram_counts(reference, n);
        let s = ngram_counts(source, n);
        let matched = clipped_matches(&c, &r);
        let penalty: usize = s
            .iter()
            .filter(|(g, _)| !r.contains_key(*g))
            .map(|(g, sc)| (*sc).min(c.get(g).copied().unwrap_or(0)))
            .sum();
        *part = (matched.saturating_sub(penalty), c.values().sum());
    }
    brevity_penalty(candidate.len(), reference.len()) * smoothed_geo_mean(&parts)
}

fn set_f1(pred: &BTreeSet<&[String]>, gold: &BTreeSet<&[String]>) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let hit = pred.intersection(gold).count() as f64;
    let p = hit / pred.len() as f64;
    let r = hit / gold.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn set_precision(pred: &BTreeSet<&[String]>, gold: &BTreeSet<&[String]>) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => pred.intersection(gold).count() as f64 / pred.len() as f64,
    }
}

/// Per-order SARI components `(add_f1, keep_f1, del_precision)`.
pub fn sari_components(source: &[String], candidate: &[String], reference: &[String]) -> [(f64, f64, f64); 4] {
    let mut out = [(0.0, 0.0, 0.0); 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let s = ngram_set(source, n);
        let c = ngram_set(candidate, n);
        let r = ngram_set(reference, n);
        let add_pred: BTreeSet<_> = c.difference(&s).copied().collect();
        let add_gold: BTreeSet<_> = r.difference(&s).copied().collect();
        let keep_pred: BTreeSet<_> = c.intersection(&s).copied().collect();
        let keep_gold: BTreeSet<_> = r.intersection(&s).copied().collect();
        let del_pred: BTreeSet<_> = s.difference(&c).copied().collect();
        let del_gold: BTreeSet<_> = s.difference(&r).copied().collect();
        *slot = (
            set_f1(&add_pred, &add_gold),
            set_f1(&keep_pred, &keep_gold),
            set_precision(&del_pred, &del_gold),
        );
    }
    out
}

pub fn sari(source: &[String], candidate: &[String], reference: &[String]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference(String::new()));
    }
    let total: f64 = sari_components(source, candidate, reference)
        .iter()
        .map(|(a, k, d)| (a + k + d) / 3.0)
        .sum();
    Ok(total / 4.0)
}

/// Unigram alignment as `(candidate_index, reference_index)` pairs sorted by
/// candidate index. Exact matches are placed first, then stem matches; each
/// candidate word takes the free reference position that adds the fewest
/// crossings, lowest index on ties.
pub fn meteor_alignment(candidate: &[String], reference: &[String], stem: &dyn Fn(&str) -> String) -> Vec<(usize, usize)> {
    let mut aligned: Vec<(usize, usize)> = Vec::new();
    let mut cand_used = alloc::vec![false; candidate.len()];
    let mut ref_used = alloc::vec![false; reference.len()];
    let cand_stems: Vec<String> = candidate.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w)).collect();

    for stage in 0..2 {
        for i in 0..candidate.len() {
            if cand_used[i] {
                continue;
            }
            let mut best: Option<(usize, usize)> = None;
            for j in 0..reference.len() {
                if ref_used[j] {
                    continue;
                }
                let hit = if stage == 0 {
                    candidate[i] == reference[j]
                } else {
                    cand_stems[i] == ref_stems[j]
                };
                if !hit {
                    continue;
                }
                let crossings = aligned
                    .iter()
                    .filter(|&&(ci, rj)| (ci < i) != (rj < j))
                    .count();
                if best.map_or(true, |(bc, _)| crossings < bc) {
                    best = Some((crossings, j));
                }
            }
            if let Some((_, j)) = best {
                cand_used[i] = true;
                ref_used[j] = true;
                aligned.push((i, j));
            }
        }
    }
    aligned.sort_unstable();
    aligned
}

fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor(candidate: &[String], reference: &[String], stem: &dyn Fn(&str) -> String) -> f64 {
    let alignment = meteor_alignment(candidate, reference, stem);
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunk_count(&alignment) as f64 / m as f64;
    fmean * (1.0 - 0.5 * frag * frag * frag)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Names of metrics whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_division: Vec<String>,
}

/// Positive class is [`Label::Inconsistent`].
pub fn classification_metrics(predictions: &[Label], labels: &[Label]) -> Result<ClassificationMetrics, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut cm = Confusion::default();
    for (p, l) in predictions.iter().zip(labels) {
        match (p.is_inconsistent(), l.is_inconsistent()) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    let mut zero_division = Vec::new();
    let mut ratio = |num: usize, den: usize, name: &str| {
        if den == 0 {
            zero_division.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision");
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall");
    let f1 = if precision + recall == 0.0 {
        zero_division.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy: (cm.tp + cm.tn) as f64 / labels.len() as f64,
        precision,
        recall,
        f1,
        confusion: cm,
        zero_division,
    })
}

pub fn success_rate(judgments: &[bool]) -> Result<f64, MetricError> {
    if judgments.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(judgments.iter().filter(|j| **j).count() as f64 / judgments.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMetric {
    Bleu4,
    Meteor,
    Sari,
    Gleu,
}

impl TextMetric {
    pub const ALL: [TextMetric; 4] = [TextMetric::Bleu4, TextMetric::Meteor, TextMetric::Sari, TextMetric::Gleu];

    pub fn name(self) -> &'static str {
        match self {
            TextMetric::Bleu4 => "bleu4",
            TextMetric::Meteor => "meteor",
            TextMetric::Sari => "sari",
            TextMetric::Gleu => "gleu",
        }
    }

    pub fn parse(name: &str) -> Result<Self, MetricError> {
        match name.to_ascii_lowercase().as_str() {
            "bleu" | "bleu4" | "bleu-4" => Ok(TextMetric::Bleu4),
            "meteor" => Ok(TextMetric::Meteor),
            "sari" => Ok(TextMetric::Sari),
            "gleu" => Ok(TextMetric::Gleu),
            _ => Err(MetricError::UnknownMetric(name.to_string())),
        }
    }

    pub fn score(self, pair: &ScoredPair, stem: &dyn Fn(&str) -> String) -> Result<f64, MetricError> {
        if pair.reference.is_empty() {
            return Err(MetricError::EmptyReference(pair.case_id.clone()));
        }
        Ok(match self {
            TextMetric::Bleu4 => bleu4(&pair.candidate, &pair.reference),
            TextMetric::Meteor => meteor(&pair.candidate, &pair.reference, stem),
            TextMetric::Sari => sari(&pair.source, &pair.candidate, &pair.reference)?,
            TextMetric::Gleu => gleu(&pair.source, &pair.candidate, &pair.reference),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean sentence score times 100.
    pub corpus: BTreeMap<String, f64>,
    pub per_case: Vec<CaseScores>,
}

impl MetricsReport {
    /// Two-decimal rendering used in tables.
    pub fn rendered(&self, metric: TextMetric) -> Option<String> {
        self.corpus.get(metric.name()).map(|v| format!("{v:.2}"))
    }
}

pub fn corpus_scores(pairs: &[ScoredPair], metrics: &[TextMetric], stem: &dyn Fn(&str) -> String) -> Result<MetricsReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut per_case = Vec::with_capacity(pairs.len());
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for pair in pairs {
        let mut scores = BTreeMap::new();
        for &m in metrics {
            let s = m.score(pair, stem)?;
            *totals.entry(m.name().to_string()).or_insert(0.0) += s;
            scores.insert(m.name().to_string(), s);
        }
        per_case.push(CaseScores {
            case_id: pair.case_id.clone(),
            scores,
        });
    }
    let n = pairs.len() as f64;
    let corpus = totals.into_iter().map(|(k, v)| (k, 100.0 * v / n)).collect();
    Ok(MetricsReport { corpus, per_case })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn no_stem(w: &str) -> String {
        w.to_string()
    }

    // Toy stemmer for the tests: strips a trailing "s".
    fn strip_s(w: &str) -> String {
        w.strip_suffix('s').unwrap_or(w).to_string()
    }

    /// Reference BLEU written from the textbook definition with explicit
    /// n-gram lists rather than maps.
    fn oracle_bleu(c: &[String], r: &[String], source: Option<&[String]>) -> f64 {
        if c.is_empty() {
            return 0.0;
        }
        let grams = |t: &[String], n: usize| -> Vec<Vec<String>> {
            if t.len() < n { vec![] } else { (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect() }
        };
        let count = |list: &Vec<Vec<String>>, g: &Vec<String>| list.iter().filter(|x| *x == g).count();
        let mut logp = 0.0f64;
        for n in 1..=4 {
            let cg = grams(c, n);
            let rg = grams(r, n);
            let mut seen: Vec<Vec<String>> = vec![];
            let mut num = 0i64;
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                num += count(&cg, g).min(count(&rg, g)) as i64;
            }
            if let Some(s) = source {
                let sg = grams(s, n);
                let mut seen_s: Vec<Vec<String>> = vec![];
                for g in &sg {
                    if seen_s.contains(g) || rg.contains(g) {
                        continue;
                    }
                    seen_s.push(g.clone());
                    num -= count(&sg, g).min(count(&cg, g)) as i64;
                }
                num = num.max(0);
            }
            let mut den = cg.len() as i64;
            if n > 1 && num == 0 {
                num += 1;
                den += 1;
            }
            if num == 0 || den == 0 {
                return 0.0;
            }
            logp += ((num as f64) / (den as f64)).ln() / 4.0;
        }
        let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
        bp * logp.exp()
    }

    /// SARI by enumerating every n-gram occurrence and deduplicating with
    /// linear scans.
    fn oracle_sari(s: &[String], c: &[String], r: &[String]) -> f64 {
        let set = |t: &[String], n: usize| -> Vec<Vec<String>> {
            let mut v: Vec<Vec<String>> = vec![];
            if t.len() >= n {
                for i in 0..=t.len() - n {
                    let g = t[i..i + n].to_vec();
                    if !v.contains(&g) {
                        v.push(g);
                    }
                }
            }
            v
        };
        let minus = |a: &Vec<Vec<String>>, b: &Vec<Vec<String>>| a.iter().filter(|g| !b.contains(g)).cloned().collect::<Vec<_>>();
        let inter = |a: &Vec<Vec<String>>, b: &Vec<Vec<String>>| a.iter().filter(|g| b.contains(g)).cloned().collect::<Vec<_>>();
        let f1 = |p: &Vec<Vec<String>>, g: &Vec<Vec<String>>| -> f64 {
            if p.is_empty() && g.is_empty() {
                return 1.0;
            }
            if p.is_empty() || g.is_empty() {
                return 0.0;
            }
            let h = inter(p, g).len() as f64;
            let (pp, rr) = (h / p.len() as f64, h / g.len() as f64);
            if pp + rr == 0.0 { 0.0 } else { 2.0 * pp * rr / (pp + rr) }
        };
        let prec = |p: &Vec<Vec<String>>, g: &Vec<Vec<String>>| -> f64 {
            if p.is_empty() && g.is_empty() {
                1.0
            } else if p.is_empty() || g.is_empty() {
                0.0
            } else {
                inter(p, g).len() as f64 / p.len() as f64
            }
        };
        let mut total = 0.0;
        for n in 1..=4 {
            let (ss, cs, rs) = (set(s, n), set(c, n), set(r, n));
            let add = f1(&minus(&cs, &ss), &minus(&rs, &ss));
            let keep = f1(&inter(&cs, &ss), &inter(&rs, &ss));
            let del = prec(&minus(&ss, &cs), &minus(&ss, &rs));
            total += (add + keep + del) / 3.0;
        }
        total / 4.0
    }

    #[test]
    fn bleu_examples() {
        let r = toks("returns the current zone offset");
        assert_eq!(bleu4(&r, &r), 1.0);
        assert_eq!(bleu4(&[], &r), 0.0);
        let v = bleu4(&toks("the cat"), &toks("the cat sat"));
        // p1 = p2 = 1, p3 = p4 = 1/1 after smoothing, BP = e^(1-3/2).
        assert!((v - libm::exp(-0.5)).abs() < 1e-12);
        assert!((v - oracle_bleu(&toks("the cat"), &toks("the cat sat"), None)).abs() < 1e-9);
    }

    #[test]
    fn gleu_examples() {
        let r = toks("returns the current zone offset");
        assert_eq!(gleu(&toks("returns the zone"), &r, &r), 1.0);
        let s = toks("a b c d");
        assert_eq!(gleu(&s, &s, &toks("w x y z")), 0.0);
        let (s, c, rf) = (toks("return the old value here"), toks("return the new value here"), toks("return the new value"));
        let v = gleu(&s, &c, &rf);
        assert!((v - oracle_bleu(&c, &rf, Some(&s))).abs() < 1e-9);
        assert!(v < bleu4(&c, &rf));
    }

    #[test]
    fn sari_examples() {
        let s = toks("returns the offset");
        assert_eq!(sari(&s, &s, &s).unwrap(), 1.0);
        let (a, b) = (toks("a b"), toks("a c"));
        assert!((sari(&a, &b, &b).unwrap() - oracle_sari(&a, &b, &b)).abs() < 1e-9);
        let comps = sari_components(&s, &s, &toks("returns the new offset"));
        assert_eq!(comps[0].0, 0.0);
        assert!(sari(&s, &s, &[]).is_err());
        let (s2, c2, r2) = (toks("x y z w"), toks("x q z"), toks("x q w z"));
        assert!((sari(&s2, &c2, &r2).unwrap() - oracle_sari(&s2, &c2, &r2)).abs() < 1e-9);
    }

    #[test]
    fn meteor_examples() {
        assert_eq!(meteor(&toks("a b"), &toks("c d"), &no_stem), 0.0);
        let v = meteor(&toks("checks the address"), &toks("check the address"), &strip_s);
        assert!((v - (1.0 - 1.0 / 54.0)).abs() < 1e-12);
        // Exact stage alone leaves "checks" unmatched: m=2, P=R=2/3, ch=1.
        let exact = meteor(&toks("checks the address"), &toks("check the address"), &no_stem);
        let expected = (2.0 / 3.0) * (1.0 - 0.5 * (1.0f64 / 2.0).powi(3));
        assert!((exact - expected).abs() < 1e-12);
        let long: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let v = meteor(&long, &long, &no_stem);
        assert!((v - (1.0 - 0.5 / 125_000.0)).abs() < 1e-12);
        // Reversed order: every word its own chunk.
        let rev: Vec<String> = toks("a b c").into_iter().rev().collect();
        let v = meteor(&rev, &toks("a b c"), &no_stem);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alignment_prefers_fewer_crossings() {
        let al = meteor_alignment(&toks("the a the"), &toks("the b the"), &no_stem);
        assert_eq!(al, vec![(0, 0), (2, 2)]);
    }

    #[test]
    fn classification_examples() {
        use Label::*;
        let labels = [Inconsistent, Inconsistent, Inconsistent, Consistent, Consistent, Consistent];
        let preds = [Inconsistent, Inconsistent, Consistent, Inconsistent, Consistent, Consistent];
        let m = classification_metrics(&preds, &labels).unwrap();
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        let all = classification_metrics(&labels, &labels).unwrap();
        assert_eq!((all.accuracy, all.precision, all.recall, all.f1), (1.0, 1.0, 1.0, 1.0));
        let none = classification_metrics(&[Consistent; 6], &labels).unwrap();
        assert_eq!(none.precision, 0.0);
        assert!(none.zero_division.iter().any(|z| z == "precision"));
        assert!(classification_metrics(&preds[..2], &labels).is_err());
    }

    #[test]
    fn success_rate_examples() {
        assert!((success_rate(&[true, true, false]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(success_rate(&[true; 4]).unwrap(), 1.0);
        assert!(success_rate(&[]).is_err());
        let mut j = vec![true; 98];
        j.extend([false; 52]);
        assert!((success_rate(&j).unwrap() - 0.6533).abs() < 5e-5);
    }

    #[test]
    fn corpus_report_and_permutation() {
        let p1 = ScoredPair::from_text("a", "Returns the old value.", "Returns the new value.", "Returns the new value.").unwrap();
        let p2 = ScoredPair::from_text("b", "@param x the x", "@param y the y", "@param y the y value").unwrap();
        let r = corpus_scores(&[p1.clone(), p2.clone()], &TextMetric::ALL, &strip_s).unwrap();
        let swapped = corpus_scores(&[p2, p1], &TextMetric::ALL, &strip_s).unwrap();
        assert_eq!(r.per_case[0], swapped.per_case[1]);
        let mean = (r.per_case[0].scores["gleu"] + r.per_case[1].scores["gleu"]) * 50.0;
        assert!((r.corpus["gleu"] - mean).abs() < 1e-12);
        assert_eq!(r.rendered(TextMetric::Bleu4).unwrap().split('.').nth(1).unwrap().len(), 2);
        assert!(ScoredPair::from_text("c", "x", "y", "  ").is_err());
        assert!(TextMetric::parse("rouge").is_err());
    }

    fn word_vec(alphabet: &'static [&'static str], max: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(alphabet), 1..max)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn bleu_equals_gleu_on_disjoint_source(
            c in word_vec(&["a", "b", "c", "d"], 9),
            r in word_vec(&["a", "b", "c", "d"], 9),
            s in word_vec(&["x", "y", "z"], 9),
        ) {
            prop_assert!((bleu4(&c, &r) - gleu(&s, &c, &r)).abs() < 1e-12);
        }

        #[test]
        fn metrics_match_oracles_and_stay_in_range(
            s in word_vec(&["a", "b", "c", "d", "e"], 8),
            c in word_vec(&["a", "b", "c", "d", "e"], 8),
            r in word_vec(&["a", "b", "c", "d", "e"], 8),
        ) {
            let b = bleu4(&c, &r);
            let g = gleu(&s, &c, &r);
            let sa = sari(&s, &c, &r).unwrap();
            let m = meteor(&c, &r, &strip_s);
            prop_assert!((b - oracle_bleu(&c, &r, None)).abs() < 1e-9);
            prop_assert!((g - oracle_bleu(&c, &r, Some(&s))).abs() < 1e-9);
            prop_assert!((sa - oracle_sari(&s, &c, &r)).abs() < 1e-9);
            for v in [b, g, sa, m] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
