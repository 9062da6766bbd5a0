//! Seeded synthetic corpora for tests, demos and smoke runs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CciCase, CommentType, Corpus, Label, Split};
use crate::detector::DetectorConfig;
use crate::lexing::tokenize_code;

/// Method calls that only appear in inconsistent cases.
pub const SIGNAL_CALLS: [&str; 3] = ["negate", "invert", "reverse"];
/// Calls appended in consistent cases.
pub const NOISE_CALLS: [&str; 3] = ["trace", "debug", "audit"];

const NOUNS: [&str; 10] = ["name", "count", "value", "size", "index", "offset", "length", "total", "key", "path"];
const OWNERS: [&str; 5] = ["buffer", "record", "node", "entry", "session"];
const TYPES: [&str; 4] = ["int", "long", "String", "Object"];
const TEMPLATES: [&str; 3] = [
    "Returns the {n} of this {o}.",
    "@return the current {n} of the {o}",
    "Gets the {n} stored in this {o}.",
];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Balanced corpus where a case is inconsistent iff its new code calls one
/// of [`SIGNAL_CALLS`]. Splits cycle train x7, valid, test x2.
pub fn separable_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
    labels.shuffle(&mut rng);
    let cases = labels
        .into_iter()
        .enumerate()
        .map(|(i, inconsistent)| {
            let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
            let owner = OWNERS[rng.gen_range(0..OWNERS.len())];
            let ty = TYPES[rng.gen_range(0..TYPES.len())];
            let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
            let comment = template.replace("{n}", noun).replace("{o}", owner);
            let method = format!("get{}", capitalize(noun));
            let old_code = format!("public {ty} {method}() {{ return this.{noun}; }}");
            let new_code = if inconsistent {
                let call = SIGNAL_CALLS[rng.gen_range(0..SIGNAL_CALLS.len())];
                format!("public {ty} {method}() {{ return {call}(this.{noun}); }}")
            } else {
                let call = NOISE_CALLS[rng.gen_range(0..NOISE_CALLS.len())];
                format!("public {ty} {method}() {{ log.{call}(\"{noun}\"); return this.{noun}; }}")
            };
            let split = match i % 10 {
                0..=6 => Split::Train,
                7 => Split::Valid,
                _ => Split::Test,
            };
            let comment_type = if comment.starts_with('@') { CommentType::Return } else { CommentType::Summary };
            CciCase::new(format!("syn-{i:04}"), comment_type, comment, old_code, new_code)
                .with_label(Label::from_bool(inconsistent))
                .with_split(split)
        })
        .collect();
    Corpus::new(cases).expect("generated ids are unique")
}

/// Detector settings for [`separable_corpus`]. With 140 training cases,
/// batch 32 leaves too few Adam steps in 10 epochs, so batches are smaller
/// and the step larger.
pub fn separable_training_config() -> DetectorConfig {
    DetectorConfig {
        embed_dim: 32,
        gru_hidden: 32,
        batch_size: 8,
        learning_rate: 3e-3,
        ..DetectorConfig::default()
    }
}

/// The bag-of-words rule the generator encodes.
pub fn keyword_rule(case: &CciCase) -> Label {
    let toks = tokenize_code(&case.new_code);
    Label::from_bool(toks.tokens.iter().any(|t| SIGNAL_CALLS.contains(&t.as_str())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_separates_generated_corpus() {
        let c = separable_corpus(200, 7);
        assert_eq!(c.len(), 200);
        assert!(c.cases.iter().all(|k| Some(keyword_rule(k)) == k.label));
        let pos = c.cases.iter().filter(|k| k.is_positive()).count();
        assert_eq!(pos, 100);
        assert_eq!(c.split(Split::Train).len(), 140);
        assert_eq!(c.split(Split::Test).len(), 40);
        assert_eq!(separable_corpus(200, 7), c);
    }
}
