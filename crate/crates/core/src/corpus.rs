//! Case data model, normalization, de-duplication and split hygiene.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommentType {
    Return,
    Param,
    Summary,
}

/// Gold consistency label. Serialized as the integers `0` and `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Consistent = 0,
    Inconsistent = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Consistent => 0.0,
            Label::Inconsistent => 1.0,
        }
    }

    pub fn from_bool(inconsistent: bool) -> Self {
        if inconsistent {
            Label::Inconsistent
        } else {
            Label::Consistent
        }
    }

    pub fn is_inconsistent(self) -> bool {
        self == Label::Inconsistent
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LabelVisitor;

        impl Visitor<'_> for LabelVisitor {
            type Value = Label;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("0, 1, or a boolean")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Label, E> {
                match v {
                    0 => Ok(Label::Consistent),
                    1 => Ok(Label::Inconsistent),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Label, E> {
                match v {
                    0 => Ok(Label::Consistent),
                    1 => Ok(Label::Inconsistent),
                    _ => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Label, E> {
                Ok(Label::from_bool(v))
            }
        }

        deserializer.deserialize_any(LabelVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// One method/comment change record.
///
/// `old_code`/`new_code` are the method before and after the change,
/// `old_comment` the comment attached to the old method and `new_comment`
/// the developer's updated comment when known. Fields not recognized by this
/// crate are carried in `extra` and written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CciCase {
    pub id: String,
    pub comment_type: CommentType,
    pub old_comment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_comment: Option<String>,
    pub old_code: String,
    pub new_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl CciCase {
    /// Minimal constructor used by tests, fixtures and synthesis.
    pub fn new(
        id: impl Into<String>,
        comment_type: CommentType,
        old_comment: impl Into<String>,
        old_code: impl Into<String>,
        new_code: impl Into<String>,
    ) -> Self {
        CciCase {
            id: id.into(),
            comment_type,
            old_comment: old_comment.into(),
            new_comment: None,
            old_code: old_code.into(),
            new_code: new_code.into(),
            label: None,
            split: None,
            synthetic: false,
            parent_id: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_new_comment(mut self, c: impl Into<String>) -> Self {
        self.new_comment = Some(c.into());
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn is_positive(&self) -> bool {
        self.label == Some(Label::Inconsistent)
    }

    /// Checks the per-record invariants (non-empty id, code and comment;
    /// synthetic cases name a parent).
    pub fn validate(&self) -> Result<(), CorpusError> {
        let missing = |field: &'static str| CorpusError::MissingField {
            id: self.id.clone(),
            field,
        };
        if self.id.is_empty() {
            return Err(CorpusError::EmptyId);
        }
        if self.old_code.trim().is_empty() {
            return Err(missing("old_code"));
        }
        if self.new_code.trim().is_empty() {
            return Err(missing("new_code"));
        }
        if self.old_comment.trim().is_empty() {
            return Err(missing("old_comment"));
        }
        if self.synthetic && self.parent_id.as_deref().is_none_or(str::is_empty) {
            return Err(missing("parent_id"));
        }
        Ok(())
    }

    /// The normalized (old_code, new_code, old_comment, new_comment) key used
    /// for duplicate detection. `None` when the new comment is unknown.
    pub fn quadruple(&self) -> Option<Quadruple> {
        let new_comment = self.new_comment.as_deref()?;
        Some(Quadruple {
            old_code: normalize_text(&self.old_code),
            new_code: normalize_text(&self.new_code),
            old_comment: normalize_text(&self.old_comment),
            new_comment: normalize_text(new_comment),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub old_code: String,
    pub new_code: String,
    pub old_comment: String,
    pub new_comment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("case id must be non-empty")]
    EmptyId,
    #[error("duplicate case id `{0}`")]
    DuplicateId(String),
    #[error("case `{id}`: missing or empty field `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("synthetic case `{id}` has synthetic parent `{parent}`")]
    SyntheticParent { id: String, parent: String },
    #[error("case `{0}` has no split assigned")]
    UnassignedSplit(String),
    #[error("case `{0}` has no label")]
    Unlabeled(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub cases: Vec<CciCase>,
    pub source_path: Option<String>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and record invariants.
    pub fn new(cases: Vec<CciCase>) -> Result<Self, CorpusError> {
        let corpus = Corpus {
            cases,
            source_path: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CciCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.cases.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut by_id: BTreeMap<&str, &CciCase> = BTreeMap::new();
        for case in &self.cases {
            case.validate()?;
            if by_id.insert(case.id.as_str(), case).is_some() {
                return Err(CorpusError::DuplicateId(case.id.clone()));
            }
        }
        for case in self.cases.iter().filter(|c| c.synthetic) {
            let parent = case.parent_id.as_deref().unwrap_or_default();
            if by_id.get(parent).is_some_and(|p| p.synthetic) {
                return Err(CorpusError::SyntheticParent {
                    id: case.id.clone(),
                    parent: parent.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Corpus {
        Corpus {
            cases: self
                .cases
                .iter()
                .filter(|c| c.split == Some(split))
                .cloned()
                .collect(),
            source_path: self.source_path.clone(),
        }
    }

    /// Fails on the first case without a label.
    pub fn require_labels(&self) -> Result<(), CorpusError> {
        match self.cases.iter().find(|c| c.label.is_none()) {
            Some(c) => Err(CorpusError::Unlabeled(c.id.clone())),
            None => Ok(()),
        }
    }
}

/// Replaces tabs, carriage returns and newlines with spaces, collapses
/// whitespace runs to one space and trims both ends.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    /// Number of quadruples shared by more than one case.
    pub groups_found: usize,
    pub removed_ids: Vec<String>,
    /// Groups whose retained case was chosen for carrying the inconsistent label.
    pub retained_by_true_label: usize,
    /// Groups resolved by keeping the first occurrence (no inconsistent member).
    pub retained_first_occurrence: usize,
    pub tie_break: String,
}

/// Collapses cases sharing a normalized quadruple to one survivor.
///
/// Within a group the first case labelled inconsistent is kept; otherwise the
/// first occurrence. Survivors keep their input order.
pub fn deduplicate(corpus: &Corpus) -> Result<(Corpus, DedupReport), CorpusError> {
    let mut groups: BTreeMap<Quadruple, Vec<usize>> = BTreeMap::new();
    for (idx, case) in corpus.cases.iter().enumerate() {
        let key = case.quadruple().ok_or_else(|| CorpusError::MissingField {
            id: case.id.clone(),
            field: "new_comment",
        })?;
        groups.entry(key).or_default().push(idx);
    }

    let mut keep = alloc::vec![false; corpus.cases.len()];
    let mut report = DedupReport {
        tie_break: "first_occurrence".to_string(),
        ..DedupReport::default()
    };
    for members in groups.values() {
        let winner = members
            .iter()
            .copied()
            .find(|&i| corpus.cases[i].is_positive());
        if members.len() > 1 {
            report.groups_found += 1;
            if winner.is_some() {
                report.retained_by_true_label += 1;
            } else {
                report.retained_first_occurrence += 1;
            }
        }
        keep[winner.unwrap_or(members[0])] = true;
    }

    let mut cases = Vec::with_capacity(groups.len());
    for (case, kept) in corpus.cases.iter().zip(&keep) {
        if *kept {
            cases.push(case.clone());
        } else {
            report.removed_ids.push(case.id.clone());
        }
    }
    Ok((
        Corpus {
            cases,
            source_path: corpus.source_path.clone(),
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLeak {
    pub quadruple: Quadruple,
    pub splits: Vec<Split>,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HygieneReport {
    pub violations: Vec<SplitLeak>,
}

impl HygieneReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every normalized quadruple that occurs in more than one split.
///
/// Cases without a new comment are keyed with an empty new comment.
pub fn check_split_hygiene(corpus: &Corpus) -> Result<HygieneReport, CorpusError> {
    let mut groups: BTreeMap<Quadruple, Vec<&CciCase>> = BTreeMap::new();
    for case in &corpus.cases {
        if case.split.is_none() {
            return Err(CorpusError::UnassignedSplit(case.id.clone()));
        }
        let key = case.quadruple().unwrap_or_else(|| Quadruple {
            old_code: normalize_text(&case.old_code),
            new_code: normalize_text(&case.new_code),
            old_comment: normalize_text(&case.old_comment),
            new_comment: String::new(),
        });
        groups.entry(key).or_default().push(case);
    }
    let violations = groups
        .into_iter()
        .filter_map(|(quadruple, members)| {
            let splits: BTreeSet<Split> = members.iter().filter_map(|c| c.split).collect();
            (splits.len() > 1).then(|| SplitLeak {
                quadruple,
                splits: splits.into_iter().collect(),
                ids: members.iter().map(|c| c.id.clone()).collect(),
            })
        })
        .collect();
    Ok(HygieneReport { violations })
}
