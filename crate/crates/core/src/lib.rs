//! Algorithmic core for just-in-time code–comment inconsistency (CCI) work.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, HTTP
//! backends, timing and the command line live in the companion `cci` crate.
//!
//! The pipeline stages map onto modules:
//!
//! - [`corpus`]: the case data model, text normalization, de-duplication and
//!   split hygiene.
//! - [`lexing`] and [`diffscript`]: token streams and the add/del/keep/replace
//!   edit-script representation of a code change.
//! - [`synfilter`] and [`semfilter`]: syntactic and LLM-vote based removal of
//!   false-positive inconsistency labels.
//! - [`detector`]: the Bi-GRU + self-attention similarity classifier with
//!   hand-written backpropagation.
//! - [`enhance`]: iterative synthesis of hard training cases.
//! - [`fixer`]: comment repair prompts plus LoRA and KTO arithmetic.
//! - [`evalkit`]: BLEU-4, METEOR, SARI, GLEU and classification metrics.

#![no_std]

extern crate alloc;

pub mod corpus;
pub mod detector;
pub mod diffscript;
pub mod enhance;
pub mod evalkit;
pub mod fixer;
pub mod fixtures;
pub mod lexing;
pub mod linalg;
pub mod llm;
pub mod semfilter;
pub mod synfilter;

pub use corpus::{CciCase, CommentType, Corpus, Label, Split};
pub use diffscript::{EditScript, EditSpan};
pub use lexing::{TokenKind, TokenSeq};
pub use llm::{BackendError, ChatBackend, ChatMessage, ChatRequest, Role};

