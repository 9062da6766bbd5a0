//! Comment repair through a chat backend, plus LoRA and KTO arithmetic.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::CciCase;
use crate::diffscript::{build_edit_script, render_edit_script};
use crate::lexing::tokenize_code;
use crate::linalg::{sigmoid, Matrix, ShapeError};
use crate::llm::{BackendError, ChatBackend, ChatMessage, ChatRequest};

pub const FIX_MAX_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixResult {
    pub case_id: String,
    pub predicted_comment: String,
    pub backend: String,
    #[serde(rename = "latency_s")]
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixError {
    #[error("case `{id}` is missing `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("completion contained no comment text")]
    EmptyCompletion,
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("rank {r} exceeds min(d, k) = {max}")]
    Rank { r: usize, max: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("invalid parameter: {0}")]
    Param(&'static str),
}

/// Monotonic seconds source; the std crate supplies a real clock.
pub trait Clock {
    fn now_s(&self) -> f64;
}

const FIX_SYSTEM_PROMPT: &str = "You repair Java method comments. A code change has been made to a method, \
and its old comment no longer matches the new code. Write an updated comment that is consistent with the \
new code, changing only what the code change made wrong and keeping the original wording and style \
elsewhere. Output only the corrected comment text, with no explanation and no code.";

pub fn build_fix_prompt(case: &CciCase) -> Result<Vec<ChatMessage>, FixError> {
    for (field, value) in [
        ("old_comment", &case.old_comment),
        ("old_code", &case.old_code),
        ("new_code", &case.new_code),
    ] {
        if value.trim().is_empty() {
            return Err(FixError::MissingField {
                id: case.id.clone(),
                field,
            });
        }
    }
    let script = build_edit_script(&tokenize_code(&case.old_code), &tokenize_code(&case.new_code));
    let rendered = render_edit_script(&script)
        .map(|t| t.render())
        .unwrap_or_else(|_| String::from("(edit script unavailable)"));
    let mut user = String::new();
    let _ = write!(
        user,
        "Old comment:\n{}\n\nCode change (edit script):\n{}\n\nNew code:\n{}\n\n\
         Reply with the corrected comment only.",
        case.old_comment.trim(),
        rendered,
        case.new_code.trim()
    );
    Ok(alloc::vec![ChatMessage::system(FIX_SYSTEM_PROMPT), ChatMessage::user(user)])
}

fn strip_fences(text: &str) -> &str {
    let Some(start) = text.find("```") else {
        return text;
    };
    let after = &text[start + 3..];
    // Drop an info string such as ```java.
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

/// Reduces a completion to its first comment block: a `/* ... */` block if
/// present, else the first run of `//` lines, else the first paragraph.
pub fn extract_comment(completion: &str) -> Option<String> {
    let text = strip_fences(completion);
    if let Some(start) = text.find("/*") {
        let end = text[start..].find("*/").map_or(text.len(), |e| start + e + 2);
        let block = text[start..end].trim();
        return (!block.is_empty()).then(|| block.to_string());
    }
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    if let Some(first) = lines.iter().position(|l| l.starts_with("//")) {
        let run: Vec<&str> = lines[first..].iter().take_while(|l| l.starts_with("//")).copied().collect();
        return Some(run.join("\n"));
    }
    let para: Vec<&str> = lines
        .iter()
        .skip_while(|l| l.is_empty())
        .take_while(|l| !l.is_empty())
        .copied()
        .collect();
    let joined = para.join("\n");
    let trimmed = joined.trim();
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

pub fn fix_comment(backend: &dyn ChatBackend, case: &CciCase, clock: &dyn Clock) -> Result<FixResult, FixError> {
    let request = ChatRequest::new(build_fix_prompt(case)?, FIX_MAX_TOKENS);
    let t0 = clock.now_s();
    let completion = backend.complete(&request);
    let latency = (clock.now_s() - t0).max(0.0);
    finish_fix(case, backend.name(), completion, latency)
}

/// Post-processes one completion into a [`FixResult`].
pub fn finish_fix(case: &CciCase, backend: &str, completion: Result<String, BackendError>, latency: f64) -> Result<FixResult, FixError> {
    let text = completion?;
    let predicted_comment = extract_comment(&text).ok_or(FixError::EmptyCompletion)?;
    Ok(FixResult {
        case_id: case.id.clone(),
        predicted_comment,
        backend: backend.to_string(),
        latency,
    })
}

fn check_lora(w0: &Matrix, a: &Matrix, b: &Matrix) -> Result<(), FixError> {
    let (d, k) = w0.shape();
    let r = a.rows;
    if a.cols != k {
        return Err(ShapeError { left: w0.shape(), right: a.shape() }.into());
    }
    if b.shape() != (d, r) {
        return Err(ShapeError { left: (d, r), right: b.shape() }.into());
    }
    if r > d.min(k) {
        return Err(FixError::Rank { r, max: d.min(k) });
    }
    Ok(())
}

/// `h = W0 x + B (A x)` without forming `BA`.
pub fn lora_forward(w0: &Matrix, a: &Matrix, b: &Matrix, x: &[f64]) -> Result<Vec<f64>, FixError> {
    check_lora(w0, a, b)?;
    let base = w0.matvec(x)?;
    let low = b.matvec(&a.matvec(x)?)?;
    Ok(base.iter().zip(&low).map(|(u, v)| u + v).collect())
}

pub fn lora_merge(w0: &Matrix, a: &Matrix, b: &Matrix) -> Result<Matrix, FixError> {
    check_lora(w0, a, b)?;
    Ok(w0.add(&b.matmul(a)?)?)
}

/// Trainable parameters of a rank-`r` adapter on a `d x k` weight.
pub fn lora_param_count(d: usize, k: usize, r: usize) -> usize {
    r * (d + k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KtoParams {
    pub beta: f64,
    pub lambda_d: f64,
    pub lambda_u: f64,
}

impl Default for KtoParams {
    fn default() -> Self {
        KtoParams {
            beta: 0.1,
            lambda_d: 1.0,
            lambda_u: 1.0,
        }
    }
}

impl KtoParams {
    pub fn validate(&self) -> Result<(), FixError> {
        if !(self.beta > 0.0) {
            return Err(FixError::Param("beta must be > 0"));
        }
        if !(self.lambda_d > 0.0 && self.lambda_u > 0.0) {
            return Err(FixError::Param("lambda_d and lambda_u must be > 0"));
        }
        Ok(())
    }
}

/// Fine-tuning hyperparameters for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraStagePreset {
    pub stage: String,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub max_len: u32,
    pub lora_r: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
}

/// Supervised fine-tune then alignment, as shipped in the default config.
pub fn lora_presets() -> [LoraStagePreset; 2] {
    let stage = |name: &str, epochs, batch_size| LoraStagePreset {
        stage: name.to_string(),
        epochs,
        batch_size,
        learning_rate: 1e-5,
        max_len: 2048,
        lora_r: 8,
        lora_alpha: 32,
        lora_dropout: 0.05,
    };
    [stage("fine-tune", 10, 16), stage("alignment", 5, 32)]
}

pub fn kto_reward(policy_logp: f64, ref_logp: f64) -> Result<f64, FixError> {
    if !policy_logp.is_finite() || !ref_logp.is_finite() {
        return Err(FixError::NonFinite);
    }
    Ok(policy_logp - ref_logp)
}

/// KL baseline estimate: mean log-ratio over a reference batch, floored at 0.
pub fn kto_baseline(policy_logps: &[f64], ref_logps: &[f64]) -> Result<f64, FixError> {
    if policy_logps.is_empty() {
        return Err(FixError::Empty);
    }
    if policy_logps.len() != ref_logps.len() {
        return Err(ShapeError {
            left: (policy_logps.len(), 1),
            right: (ref_logps.len(), 1),
        }
        .into());
    }
    let mut sum = 0.0;
    for (p, r) in policy_logps.iter().zip(ref_logps) {
        sum += kto_reward(*p, *r)?;
    }
    Ok((sum / policy_logps.len() as f64).max(0.0))
}

pub fn kto_value(r: f64, z0: f64, desirable: bool, params: &KtoParams) -> f64 {
    if desirable {
        params.lambda_d * sigmoid(params.beta * (r - z0))
    } else {
        params.lambda_u * sigmoid(params.beta * (z0 - r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KtoSample {
    pub r: f64,
    pub desirable: bool,
}

/// Mean of `lambda_y - v(r)` over the samples.
pub fn kto_loss(samples: &[KtoSample], z0: f64, params: &KtoParams) -> Result<f64, FixError> {
    if samples.is_empty() {
        return Err(FixError::Empty);
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let lambda = if s.desirable { params.lambda_d } else { params.lambda_u };
            lambda - kto_value(s.r, z0, s.desirable, params)
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// d loss / d r_i for every sample.
pub fn kto_loss_grad(samples: &[KtoSample], z0: f64, params: &KtoParams) -> Result<Vec<f64>, FixError> {
    if samples.is_empty() {
        return Err(FixError::Empty);
    }
    let n = samples.len() as f64;
    Ok(samples
        .iter()
        .map(|s| {
            let (lambda, sign, arg) = if s.desirable {
                (params.lambda_d, 1.0, params.beta * (s.r - z0))
            } else {
                (params.lambda_u, -1.0, params.beta * (z0 - s.r))
            };
            let sg = sigmoid(arg);
            -lambda * sign * params.beta * sg * (1.0 - sg) / n
        })
        .collect())
}
