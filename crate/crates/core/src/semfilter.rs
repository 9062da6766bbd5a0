//! Three-voter LLM filtering of positive cases and validated-candidate
//! selection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CciCase, Corpus, Split};
use crate::llm::{ChatBackend, ChatMessage, ChatRequest};

/// Voter replies are a single word.
pub const VOTE_MAX_TOKENS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InconsistencyKind {
    ReturnType,
    MethodSignature,
    ApplicationLogic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldVerdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotExample {
    pub case: CciCase,
    pub gold_verdict: GoldVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistency_kind: Option<InconsistencyKind>,
}

/// The four in-context examples shared by every voting query: one consistent
/// case and one per inconsistency kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotSet {
    shots: Vec<ShotExample>,
}

impl ShotSet {
    pub fn new(shots: Vec<ShotExample>) -> Result<Self, SemFilterError> {
        if shots.len() != 4 {
            return Err(SemFilterError::Shots(format!("expected 4 shots, got {}", shots.len())));
        }
        let consistent = shots
            .iter()
            .filter(|s| s.gold_verdict == GoldVerdict::Consistent && s.inconsistency_kind.is_none())
            .count();
        if consistent != 1 {
            return Err(SemFilterError::Shots("exactly one consistent shot required".into()));
        }
        for kind in [
            InconsistencyKind::ReturnType,
            InconsistencyKind::MethodSignature,
            InconsistencyKind::ApplicationLogic,
        ] {
            let n = shots
                .iter()
                .filter(|s| s.gold_verdict == GoldVerdict::Inconsistent && s.inconsistency_kind == Some(kind))
                .count();
            if n != 1 {
                return Err(SemFilterError::Shots(format!("need exactly one {kind:?} shot, got {n}")));
            }
        }
        Ok(ShotSet { shots })
    }

    pub fn shots(&self) -> &[ShotExample] {
        &self.shots
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SemFilterError {
    #[error("shot configuration: {0}")]
    Shots(String),
    #[error("case `{id}` is missing `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("expected exactly 3 verdicts/voters, got {0}")]
    Arity(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Inconsistent,
    Consistent,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterVerdict {
    pub voter: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub case_id: String,
    pub verdicts: Vec<VoterVerdict>,
    pub decision: Decision,
    pub unanimous: bool,
}

const VOTE_SYSTEM_PROMPT: &str = "You are an experienced Java developer reviewing code changes. \
A method comment is inconsistent with the new code when the comment, written for the old \
version of the method, no longer describes what the new version returns, which parameters it \
takes, or what it does. Rewording, typo fixes and added or removed detail are not \
inconsistencies. Answer with exactly one word: INCONSISTENT or CONSISTENT.";

fn write_case(out: &mut String, case: &CciCase) {
    let _ = write!(
        out,
        "Old comment:\n{}\n\nOld code:\n{}\n\nNew code:\n{}\n",
        case.old_comment.trim(),
        case.old_code.trim(),
        case.new_code.trim()
    );
}

fn require(case: &CciCase) -> Result<(), SemFilterError> {
    for (field, value) in [
        ("old_comment", &case.old_comment),
        ("old_code", &case.old_code),
        ("new_code", &case.new_code),
    ] {
        if value.trim().is_empty() {
            return Err(SemFilterError::MissingField {
                id: case.id.clone(),
                field,
            });
        }
    }
    Ok(())
}

/// System + user messages asking one voter for a one-word verdict.
pub fn build_vote_prompt(case: &CciCase, shots: &ShotSet) -> Result<Vec<ChatMessage>, SemFilterError> {
    require(case)?;
    let mut user = String::from("Here are four solved examples.\n\n");
    for (i, shot) in shots.shots().iter().enumerate() {
        let _ = writeln!(user, "### Example {}", i + 1);
        write_case(&mut user, &shot.case);
        let answer = match shot.gold_verdict {
            GoldVerdict::Consistent => "CONSISTENT",
            GoldVerdict::Inconsistent => "INCONSISTENT",
        };
        let _ = writeln!(user, "\nAnswer: {answer}\n");
    }
    user.push_str("### Case to judge\n");
    write_case(&mut user, case);
    user.push_str("\nIs the old comment INCONSISTENT or CONSISTENT with the new code? Answer with exactly one word.");
    Ok(alloc::vec![ChatMessage::system(VOTE_SYSTEM_PROMPT), ChatMessage::user(user)])
}

/// First whole word equal (case-insensitively) to `inconsistent` or
/// `consistent` decides; anything else is unparseable.
pub fn parse_verdict(completion: &str) -> Verdict {
    for word in completion.split(|c: char| !c.is_alphanumeric()) {
        if word.eq_ignore_ascii_case("inconsistent") {
            return Verdict::Inconsistent;
        }
        if word.eq_ignore_ascii_case("consistent") {
            return Verdict::Consistent;
        }
    }
    Verdict::Unparseable
}

/// Keep iff at least two of three verdicts are inconsistent; unanimous iff all three.
pub fn majority_vote(verdicts: &[Verdict]) -> Result<(Decision, bool), SemFilterError> {
    if verdicts.len() != 3 {
        return Err(SemFilterError::Arity(verdicts.len()));
    }
    let hits = verdicts.iter().filter(|v| **v == Verdict::Inconsistent).count();
    let decision = if hits >= 2 { Decision::Keep } else { Decision::Discard };
    Ok((decision, hits == 3))
}

/// Queries every voter on each positive case and drops those without a
/// two-thirds inconsistent majority. Negatives are passed through unqueried.
pub fn semantic_filter(
    corpus: &Corpus,
    voters: &[&dyn ChatBackend],
    shots: &ShotSet,
) -> Result<(Corpus, Vec<VoteRecord>), SemFilterError> {
    if voters.len() != 3 {
        return Err(SemFilterError::Arity(voters.len()));
    }
    let positives: Vec<&CciCase> = corpus.cases.iter().filter(|c| c.is_positive()).collect();
    let requests = positives
        .iter()
        .map(|c| Ok(ChatRequest::new(build_vote_prompt(c, shots)?, VOTE_MAX_TOKENS)))
        .collect::<Result<Vec<_>, SemFilterError>>()?;

    let answers: Vec<Vec<VoterVerdict>> = voters
        .iter()
        .map(|voter| {
            voter
                .complete_batch(&requests)
                .into_iter()
                .map(|res| match res {
                    Ok(text) => VoterVerdict {
                        voter: voter.name().to_string(),
                        verdict: parse_verdict(&text),
                        error: None,
                    },
                    Err(e) => VoterVerdict {
                        voter: voter.name().to_string(),
                        verdict: Verdict::Unparseable,
                        error: Some(e.to_string()),
                    },
                })
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(positives.len());
    let mut discarded = alloc::collections::BTreeSet::new();
    for (i, case) in positives.iter().enumerate() {
        let verdicts: Vec<VoterVerdict> = answers.iter().map(|a| a[i].clone()).collect();
        let kinds: Vec<Verdict> = verdicts.iter().map(|v| v.verdict).collect();
        let (decision, unanimous) = majority_vote(&kinds)?;
        if decision == Decision::Discard {
            discarded.insert(case.id.as_str());
        }
        records.push(VoteRecord {
            case_id: case.id.clone(),
            verdicts,
            decision,
            unanimous,
        });
    }
    let cases = corpus
        .cases
        .iter()
        .filter(|c| !discarded.contains(c.id.as_str()))
        .cloned()
        .collect();
    Ok((
        Corpus {
            cases,
            source_path: corpus.source_path.clone(),
        },
        records,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub corpus: Corpus,
    pub available: usize,
    pub warning: Option<String>,
}

/// Seeded uniform sample of up to `n` unanimous test-split positives, in
/// corpus order, for external manual verification.
pub fn select_validated_candidates(records: &[VoteRecord], corpus: &Corpus, n: usize, seed: u64) -> Selection {
    let unanimous: alloc::collections::BTreeSet<&str> =
        records.iter().filter(|r| r.unanimous).map(|r| r.case_id.as_str()).collect();
    let pool: Vec<&CciCase> = corpus
        .cases
        .iter()
        .filter(|c| c.split == Some(Split::Test) && c.is_positive() && unanimous.contains(c.id.as_str()))
        .collect();
    let available = pool.len();
    let warning = (n > available).then(|| format!("requested {n} candidates but only {available} are unanimous"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, available, n.min(available)).into_vec();
    picked.sort_unstable();
    Selection {
        corpus: Corpus {
            cases: picked.into_iter().map(|i| pool[i].clone()).collect(),
            source_path: corpus.source_path.clone(),
        },
        available,
        warning,
    }
}
