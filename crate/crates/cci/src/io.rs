//! JSON Lines corpora, JSON reports and CSV tables.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cci_core::corpus::CorpusError;
use cci_core::{CciCase, Corpus};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub message: String,
}

/// Reads one JSON value per non-blank line. With `permissive`, bad lines are
/// skipped and returned instead of aborting.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, permissive: bool) -> Result<(Vec<T>, Vec<SkippedLine>), IoError> {
    let (items, skipped) = read_jsonl_numbered(path, permissive)?;
    Ok((items.into_iter().map(|(_, v)| v).collect(), skipped))
}

fn read_jsonl_numbered<T: DeserializeOwned>(path: &Path, permissive: bool) -> Result<(Vec<(usize, T)>, Vec<SkippedLine>), IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => items.push((i + 1, v)),
            Err(e) if permissive => skipped.push(SkippedLine {
                line: i + 1,
                message: e.to_string(),
            }),
            Err(e) => {
                return Err(IoError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((items, skipped))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn ensure_parent(path: &Path) -> Result<(), IoError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub skipped: Vec<SkippedLine>,
}

/// Loads a JSONL corpus. Invalid records (bad JSON or broken invariants)
/// abort with their line number unless `permissive` is set; duplicate ids
/// always abort.
pub fn load_corpus(path: &Path, permissive: bool) -> Result<LoadedCorpus, IoError> {
    let (raw, mut skipped) = read_jsonl_numbered::<CciCase>(path, permissive)?;
    let mut cases = Vec::with_capacity(raw.len());
    for (line, case) in raw {
        match case.validate() {
            Ok(()) => cases.push(case),
            Err(e) if permissive => skipped.push(SkippedLine { line, message: e.to_string() }),
            Err(e) => {
                return Err(IoError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
            }
        }
    }
    let mut corpus = Corpus::new(cases).map_err(|source| IoError::Corpus {
        path: path.to_path_buf(),
        source,
    })?;
    corpus.source_path = Some(path.display().to_string());
    Ok(LoadedCorpus { corpus, skipped })
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<(), IoError> {
    write_jsonl(path, &corpus.cases)
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON document with a leading `schema_version` field. `body` must
/// serialize as an object.
pub fn write_report<T: Serialize>(path: &Path, body: &T) -> Result<(), IoError> {
    let text = report_json(body).map_err(|message| IoError::Format {
        path: path.to_path_buf(),
        message,
    })?;
    write_text(path, &text)
}

pub fn report_json<T: Serialize>(body: &T) -> Result<String, String> {
    let doc = Versioned {
        schema_version: REPORT_SCHEMA_VERSION,
        body,
    };
    serde_json::to_string_pretty(&doc).map(|s| s + "\n").map_err(|e| e.to_string())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes rows with a header; every row must have `header.len()` cells.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    ensure_parent(path)?;
    let fmt = |e: csv::Error| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    w.write_record(header).map_err(fmt)?;
    for row in rows {
        w.write_record(row).map_err(fmt)?;
    }
    w.flush().map_err(io_err(path))
}
