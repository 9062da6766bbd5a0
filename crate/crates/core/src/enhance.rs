//! Iterative enhancement: retrain, collect errors on the original data, ask a
//! teacher model for similar cases, merge, repeat.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{CciCase, Corpus, CorpusError};
use crate::detector::{evaluate, train, DetectorConfig, DetectorError, DetectorModel};
use crate::llm::{ChatBackend, ChatMessage, ChatRequest};

pub const SYNTHESIS_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    pub max_iterations: usize,
    pub sampling_rate: f64,
    /// Stop once D0 F1 improves by less than this.
    pub convergence_delta: f64,
    pub seed: u64,
    /// Cases requested per sampled parent.
    pub generations_per_case: usize,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            max_iterations: 10,
            sampling_rate: 0.1,
            convergence_delta: 1e-3,
            seed: 42,
            generations_per_case: 2,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(EnhanceError::Config("sampling_rate must lie in (0, 1]".into()));
        }
        if self.generations_per_case == 0 {
            return Err(EnhanceError::Config("generations_per_case must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnhanceError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("case `{0}` is unlabeled")]
    Unlabeled(String),
    #[error("case `{0}` is synthetic; only original cases may seed synthesis")]
    Synthetic(String),
    #[error("case `{id}` is missing `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Seeded sample of `ceil(rate * eligible)` misclassified original cases
/// (at least one when any are eligible), returned in corpus order.
pub fn sample_errors(misclassified: &[String], corpus: &Corpus, rate: f64, seed: u64) -> Vec<CciCase> {
    let wanted: BTreeSet<&str> = misclassified.iter().map(String::as_str).collect();
    let eligible: Vec<&CciCase> = corpus
        .cases
        .iter()
        .filter(|c| !c.synthetic && wanted.contains(c.id.as_str()))
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let n = (libm::ceil(rate * eligible.len() as f64) as usize).clamp(1, eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| eligible[i].clone()).collect()
}

const SYNTHESIS_SYSTEM_PROMPT: &str = "You generate training data for a tool that detects Java method \
comments made outdated by a code change. Each example has an old comment, the new comment, the old \
method and the new method. You respond with strict JSON only.";

pub fn build_synthesis_prompt(case: &CciCase, k: usize) -> Result<Vec<ChatMessage>, EnhanceError> {
    let label = case.label.ok_or_else(|| EnhanceError::Unlabeled(case.id.clone()))?;
    if case.synthetic {
        return Err(EnhanceError::Synthetic(case.id.clone()));
    }
    for (field, value) in [
        ("old_comment", &case.old_comment),
        ("old_code", &case.old_code),
        ("new_code", &case.new_code),
    ] {
        if value.trim().is_empty() {
            return Err(EnhanceError::MissingField {
                id: case.id.clone(),
                field,
            });
        }
    }
    let verdict = if label.is_inconsistent() {
        "INCONSISTENT: the code change makes the old comment wrong"
    } else {
        "CONSISTENT: the old comment still describes the new code"
    };
    let mut user = String::new();
    let _ = write!(
        user,
        "A detector misjudged the following example, whose correct label is {verdict}.\n\n\
         Old comment:\n{}\n\nNew comment:\n{}\n\nOld code:\n{}\n\nNew code:\n{}\n\n\
         Write {k} new examples that keep the same kind of code change and the same label, so they \
         maintain conceptual consistency with the original case, but vary identifiers, types, comment \
         phrasing and method structure. Respond with a JSON array of exactly {k} objects, each with the \
         string fields \"old_comment\", \"new_comment\", \"old_code\" and \"new_code\". Output nothing \
         except the JSON array.",
        case.old_comment.trim(),
        case.new_comment.as_deref().unwrap_or(case.old_comment.as_str()).trim(),
        case.old_code.trim(),
        case.new_code.trim()
    );
    Ok(alloc::vec![ChatMessage::system(SYNTHESIS_SYSTEM_PROMPT), ChatMessage::user(user)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisLog {
    pub parent_id: String,
    pub message: String,
}

fn json_array_slice(text: &str) -> Option<&str> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    (end > start).then(|| &text[start..=end])
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
}

/// Parses one teacher reply into synthetic children of `parent`.
pub fn parse_synthesis(parent: &CciCase, reply: &str, tag: &str) -> (Vec<CciCase>, Vec<SynthesisLog>) {
    let log = |m: String| SynthesisLog {
        parent_id: parent.id.clone(),
        message: m,
    };
    let items: Vec<Value> = match json_array_slice(reply).map(serde_json::from_str::<Vec<Value>>) {
        Some(Ok(items)) => items,
        Some(Err(e)) => return (Vec::new(), alloc::vec![log(format!("malformed JSON: {e}"))]),
        None => return (Vec::new(), alloc::vec![log("reply contains no JSON array".into())]),
    };
    let mut cases = Vec::new();
    let mut logs = Vec::new();
    for (j, item) in items.iter().enumerate() {
        let Some(obj) = item.as_object() else {
            logs.push(log(format!("item {j} is not an object")));
            continue;
        };
        let fields: Vec<Option<String>> = ["old_comment", "new_comment", "old_code", "new_code"]
            .iter()
            .map(|k| string_field(obj, k))
            .collect();
        let missing: Vec<&str> = ["old_comment", "new_comment", "old_code", "new_code"]
            .iter()
            .zip(&fields)
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| *k)
            .collect();
        if !missing.is_empty() {
            logs.push(log(format!("item {j} missing {}", missing.join(", "))));
            continue;
        }
        let [old_comment, new_comment, old_code, new_code]: [String; 4] =
            fields.into_iter().map(Option::unwrap).collect::<Vec<_>>().try_into().expect("four fields");
        let mut child = CciCase::new(format!("{}~{tag}-{j}", parent.id), parent.comment_type, old_comment, old_code, new_code)
            .with_new_comment(new_comment);
        child.label = parent.label;
        child.split = parent.split;
        child.synthetic = true;
        child.parent_id = Some(parent.id.clone());
        cases.push(child);
    }
    (cases, logs)
}

/// Asks the teacher for `k` variants of every sampled case. Ids are
/// `<parent>~<tag>-<j>`.
pub fn synthesize_cases(teacher: &dyn ChatBackend, sampled: &[CciCase], k: usize, tag: &str) -> (Vec<CciCase>, Vec<SynthesisLog>) {
    let mut logs = Vec::new();
    let mut parents = Vec::new();
    let mut requests = Vec::new();
    for case in sampled {
        match build_synthesis_prompt(case, k) {
            Ok(msgs) => {
                parents.push(case);
                requests.push(ChatRequest::new(msgs, SYNTHESIS_MAX_TOKENS));
            }
            Err(e) => logs.push(SynthesisLog {
                parent_id: case.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    let mut cases = Vec::new();
    for (parent, reply) in parents.into_iter().zip(teacher.complete_batch(&requests)) {
        match reply {
            Ok(text) => {
                let (c, l) = parse_synthesis(parent, &text, tag);
                cases.extend(c);
                logs.extend(l);
            }
            Err(e) => logs.push(SynthesisLog {
                parent_id: parent.id.clone(),
                message: format!("teacher error: {e}"),
            }),
        }
    }
    (cases, logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ZeroIterations,
    MaxIterations,
    Converged,
    NoErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub corpus_size: usize,
    pub d0_f1: f64,
    pub d0_accuracy: f64,
    pub misclassified: usize,
    pub sampled_ids: Vec<String>,
    pub synthesized: usize,
    pub logs: Vec<SynthesisLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceHistory {
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub final_size: usize,
}

/// Returns the enhanced training set and per-iteration history. Every round
/// retrains from `init` and evaluates on `d0`.
pub fn iterative_enhance(
    init: &DetectorModel,
    d0: &Corpus,
    teacher: &dyn ChatBackend,
    detector_config: &DetectorConfig,
    config: &EnhanceConfig,
) -> Result<(Corpus, EnhanceHistory), EnhanceError> {
    config.validate()?;
    let mut current = d0.clone();
    let mut iterations = Vec::new();
    let mut prev_f1: Option<f64> = None;
    let mut stop_reason = if config.max_iterations == 0 {
        StopReason::ZeroIterations
    } else {
        StopReason::MaxIterations
    };
    for i in 0..config.max_iterations {
        let (model, _) = train(init, &current, None, detector_config)?;
        let eval = evaluate(&model, d0)?;
        let f1 = eval.metrics.f1;
        let mut record = IterationRecord {
            iteration: i,
            corpus_size: current.len(),
            d0_f1: f1,
            d0_accuracy: eval.metrics.accuracy,
            misclassified: eval.misclassified.len(),
            sampled_ids: Vec::new(),
            synthesized: 0,
            logs: Vec::new(),
        };
        if prev_f1.is_some_and(|p| f1 - p < config.convergence_delta) {
            iterations.push(record);
            stop_reason = StopReason::Converged;
            break;
        }
        if eval.misclassified.is_empty() {
            iterations.push(record);
            stop_reason = StopReason::NoErrors;
            break;
        }
        let sampled = sample_errors(&eval.misclassified, d0, config.sampling_rate, config.seed.wrapping_add(i as u64));
        let (new_cases, logs) = synthesize_cases(teacher, &sampled, config.generations_per_case, &format!("it{i}"));
        record.sampled_ids = sampled.iter().map(|c| c.id.clone()).collect();
        record.synthesized = new_cases.len();
        record.logs = logs;
        iterations.push(record);
        let mut cases = current.cases;
        cases.extend(new_cases);
        current = Corpus::new(cases)?;
        current.source_path = d0.source_path.clone();
        prev_f1 = Some(f1);
    }
    let final_size = current.len();
    Ok((
        current,
        EnhanceHistory {
            iterations,
            stop_reason,
            final_size,
        },
    ))
}
