//! Detect-then-fix over a batch of changes, with per-case timing.

use std::time::Instant;

use cci_core::detector::Detect;
use cci_core::fixer::{build_fix_prompt, finish_fix, Clock, FIX_MAX_TOKENS};
use cci_core::{ChatBackend, ChatRequest, CciCase, Corpus, Label};
use serde::{Deserialize, Serialize};

/// Reference per-case times (seconds) for detector-gated and monolithic
/// fixing on the original hardware. Context only, never asserted.
pub const REFERENCE_GATED_S: f64 = 0.6164;
pub const REFERENCE_MONOLITHIC_S: f64 = 0.9618;

/// Seconds since construction, from a monotonic source.
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_s(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Only detector-flagged cases reach the fixer.
    Gated,
    /// Every case goes to the fixer; no detection.
    Monolithic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub mode: SolveMode,
    pub n: usize,
    pub flagged: usize,
    pub fixer_calls: usize,
    pub detect_errors: usize,
    pub fix_errors: usize,
    /// The first case, timed but left out of the mean.
    pub warmup_time_s: Option<f64>,
    /// Mean over all cases after the first (the only case when n = 1).
    pub mean_case_time_s: f64,
    pub total_time_s: f64,
    /// Per-case wall time in input order.
    pub case_times_s: Vec<f64>,
    pub reference_gated_s: f64,
    pub reference_monolithic_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput {
    pub records: Vec<SolveRecord>,
    pub report: TimingReport,
}

fn fix_into(record: &mut SolveRecord, case: &CciCase, fixer: &dyn ChatBackend, calls: &mut usize, clock: &dyn Clock) {
    let request = match build_fix_prompt(case) {
        Ok(msgs) => ChatRequest::new(msgs, FIX_MAX_TOKENS),
        Err(e) => {
            record.error = Some(e.to_string());
            return;
        }
    };
    *calls += 1;
    let t0 = clock.now_s();
    let completion = fixer.complete(&request);
    let latency = clock.now_s() - t0;
    match finish_fix(case, fixer.name(), completion, latency) {
        Ok(fix) => {
            record.predicted_comment = Some(fix.predicted_comment);
            record.backend = Some(fix.backend);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
}

/// Runs every case through `detector` (gated) or straight to `fixer`
/// (monolithic). Case time runs from the start of detection to the verdict
/// or, for fixed cases, to fix completion.
pub fn solve(corpus: &Corpus, detector: Option<&dyn Detect>, fixer: &dyn ChatBackend, clock: &dyn Clock) -> SolveOutput {
    let mode = if detector.is_some() { SolveMode::Gated } else { SolveMode::Monolithic };
    let mut records = Vec::with_capacity(corpus.len());
    let (mut flagged, mut calls, mut detect_errors, mut fix_errors) = (0, 0, 0, 0);
    let mut times = Vec::with_capacity(corpus.len());
    let start = clock.now_s();
    for case in &corpus.cases {
        let t0 = clock.now_s();
        let mut record = SolveRecord {
            case_id: case.id.clone(),
            probability: None,
            verdict: None,
            predicted_comment: None,
            backend: None,
            error: None,
        };
        let send = match detector {
            None => true,
            Some(d) => match d.detect(case) {
                Ok(p) => {
                    record.probability = Some(p.probability);
                    record.verdict = Some(p.verdict);
                    p.verdict.is_inconsistent()
                }
                Err(e) => {
                    detect_errors += 1;
                    record.error = Some(e.to_string());
                    false
                }
            },
        };
        if send {
            flagged += usize::from(detector.is_some());
            fix_into(&mut record, case, fixer, &mut calls, clock);
            fix_errors += usize::from(record.error.is_some());
        }
        times.push(clock.now_s() - t0);
        records.push(record);
    }
    let total_time_s = clock.now_s() - start;
    let (warmup_time_s, rest) = match times.split_first() {
        Some((first, rest)) if !rest.is_empty() => (Some(*first), rest),
        _ => (None, &times[..]),
    };
    let mean_case_time_s = if rest.is_empty() { 0.0 } else { rest.iter().sum::<f64>() / rest.len() as f64 };
    SolveOutput {
        records,
        report: TimingReport {
            mode,
            n: corpus.len(),
            flagged,
            fixer_calls: calls,
            detect_errors,
            fix_errors,
            warmup_time_s,
            mean_case_time_s,
            total_time_s,
            case_times_s: times,
            reference_gated_s: REFERENCE_GATED_S,
            reference_monolithic_s: REFERENCE_MONOLITHIC_S,
        },
    }
}
