//! Bi-GRU + self-attention inconsistency classifier trained on BCE plus a
//! cosine-similarity term.
//!
//! The old comment goes through embedding, Bi-GRU and mean pooling to give
//! `c`. The rendered edit script goes through embedding, its own Bi-GRU,
//! multi-head self-attention and mean pooling to give `m`. A two-layer MLP
//! on `[c; m]` yields `p`. Gradients are computed by hand in [`nn`].

pub mod gradcheck;
pub mod nn;
pub mod params;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CciCase, Corpus, CorpusError, Label};
use crate::diffscript::{build_edit_script, render_edit_script, MARKERS};
use crate::evalkit::{classification_metrics, ClassificationMetrics, MetricError};
use crate::lexing::{tokenize_code, tokenize_comment, TokenSeq};
use nn::{
    add_into, attention_backward, attention_forward, bigru_backward, bigru_forward, classifier_backward,
    classifier_forward, gru_step, mean_rows, norm, AttentionCache, BiGruCache, ClassifierCache,
};
pub use params::{Attention, BiGru, Classifier, Dims, GruDir, Params};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const OOV_TOKEN: &str = "<unk>";
const COS_GUARD: f64 = 1e-12;

/// How the similarity term weights each case.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// `λ(1 − mean cos(c, m))` for every case regardless of label.
    #[default]
    Unconditioned,
    /// Consistent cases pull `c` and `m` together, inconsistent ones push
    /// them apart.
    LabelConditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub attention_heads: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Includes the OOV entry and the reserved markers.
    pub vocab_size: usize,
    pub seed: u64,
    pub prob_clamp: f64,
    /// Longer token sequences are truncated.
    pub max_seq_len: usize,
    pub similarity: SimilarityMode,
    /// Global gradient-norm cap per batch; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            embed_dim: 64,
            gru_hidden: 64,
            attention_heads: 4,
            lambda: 1.0,
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            vocab_size: 20_000,
            seed: 42,
            prob_clamp: 1e-7,
            max_seq_len: 512,
            similarity: SimilarityMode::Unconditioned,
            grad_clip: 5.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if self.embed_dim == 0 || self.gru_hidden == 0 || self.attention_heads == 0 {
            return bad("dimensions must be positive");
        }
        if self.embed_dim % self.attention_heads != 0 {
            return bad("embed_dim must be divisible by attention_heads");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return bad("prob_clamp must lie in (0, 0.5)");
        }
        if self.batch_size == 0 || self.max_seq_len == 0 {
            return bad("batch_size and max_seq_len must be positive");
        }
        if self.vocab_size < MARKERS.len() + 1 {
            return bad("vocab_size too small for reserved tokens");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("case `{0}` has an empty comment after tokenization")]
    EmptyComment(String),
    #[error("case `{0}` has an empty edit script")]
    EmptyDiff(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty corpus or batch")]
    Empty,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("model file: {0}")]
    Format(String),
}

/// Token to index map. Index 0 is OOV, then the edit-script markers.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DetectorError> {
        let ok = tokens.first().map(String::as_str) == Some(OOV_TOKEN)
            && MARKERS.iter().enumerate().all(|(i, m)| tokens.get(i + 1).map(String::as_str) == Some(*m));
        if !ok {
            return Err(DetectorError::Format("vocabulary must start with OOV and marker tokens".into()));
        }
        let index: BTreeMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(DetectorError::Format("duplicate vocabulary entry".into()));
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Most frequent training tokens first, ties broken alphabetically.
    pub fn build(corpus: &Corpus, cap: usize, max_len: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for case in &corpus.cases {
            if let Ok((c, d)) = case_tokens(case, max_len) {
                for t in c.into_iter().chain(d) {
                    if !MARKERS.contains(&t.as_str()) {
                        *counts.entry(t).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![OOV_TOKEN.to_string()];
        tokens.extend(MARKERS.iter().map(|m| m.to_string()));
        let room = cap.saturating_sub(tokens.len());
        tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t));
        Vocabulary::from_tokens(tokens).expect("reserved prefix is always present")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

fn normalize_token(t: &str) -> String {
    if MARKERS.contains(&t) {
        t.to_string()
    } else {
        t.to_lowercase()
    }
}

fn normalized(seq: &TokenSeq, max_len: usize) -> Vec<String> {
    seq.tokens.iter().take(max_len).map(|t| normalize_token(t)).collect()
}

/// Comment tokens and rendered edit-script tokens, normalized and truncated.
pub fn case_tokens(case: &CciCase, max_len: usize) -> Result<(Vec<String>, Vec<String>), DetectorError> {
    let comment = normalized(&tokenize_comment(&case.old_comment), max_len);
    if comment.is_empty() {
        return Err(DetectorError::EmptyComment(case.id.clone()));
    }
    let script = build_edit_script(&tokenize_code(&case.old_code), &tokenize_code(&case.new_code));
    let rendered = render_edit_script(&script).map_err(|_| DetectorError::EmptyDiff(case.id.clone()))?;
    let diff = normalized(&rendered, max_len);
    if diff.is_empty() {
        return Err(DetectorError::EmptyDiff(case.id.clone()));
    }
    Ok((comment, diff))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCase {
    pub comment: Vec<usize>,
    pub diff: Vec<usize>,
    /// 1.0 for inconsistent.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub vocab: Vocabulary,
    pub params: Params,
}

impl DetectorModel {
    /// Builds the vocabulary from `train` and initializes weights from `config.seed`.
    pub fn initialize(train: &Corpus, config: &DetectorConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        let vocab = Vocabulary::build(train, config.vocab_size, config.max_seq_len);
        Ok(Self::with_vocabulary(vocab, config))
    }

    pub fn with_vocabulary(vocab: Vocabulary, config: &DetectorConfig) -> Self {
        let dims = Dims {
            vocab: vocab.len(),
            embed: config.embed_dim,
            hidden: config.gru_hidden,
            heads: config.attention_heads,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        DetectorModel {
            config: config.clone(),
            vocab,
            params: Params::init(dims, &mut rng),
        }
    }

    pub fn encode(&self, case: &CciCase) -> Result<EncodedCase, DetectorError> {
        let (c, d) = case_tokens(case, self.config.max_seq_len)?;
        Ok(EncodedCase {
            comment: self.vocab.ids(&c),
            diff: self.vocab.ids(&d),
            label: case.label.map_or(0.0, Label::as_f64),
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            config: self.config.clone(),
            vocabulary: self.vocab.tokens.clone(),
            parameters: self
                .params
                .layout()
                .into_iter()
                .zip(self.params.tensors())
                .map(|((name, shape), data)| NamedTensor {
                    name,
                    shape,
                    data: data.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, DetectorError> {
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(DetectorError::Format(format!("unsupported schema_version {}", file.schema_version)));
        }
        file.config.validate()?;
        let vocab = Vocabulary::from_tokens(file.vocabulary)?;
        let dims = Dims {
            vocab: vocab.len(),
            embed: file.config.embed_dim,
            hidden: file.config.gru_hidden,
            heads: file.config.attention_heads,
        };
        let mut params = Params::zeros(dims);
        let layout = params.layout();
        if layout.len() != file.parameters.len() {
            return Err(DetectorError::Format(format!(
                "expected {} tensors, found {}",
                layout.len(),
                file.parameters.len()
            )));
        }
        for (((name, shape), slot), t) in layout.iter().zip(params.tensors_mut()).zip(file.parameters) {
            if &t.name != name || &t.shape != shape || t.data.len() != slot.len() {
                return Err(DetectorError::Format(format!("tensor `{}` does not match expected `{name}` {shape:?}", t.name)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(DetectorError::NonFinite);
            }
            *slot = t.data;
        }
        Ok(DetectorModel {
            config: file.config,
            vocab,
            params,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DetectorError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| DetectorError::Format(e.to_string()))?;
        Self::from_file(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config: DetectorConfig,
    pub vocabulary: Vec<String>,
    pub parameters: Vec<NamedTensor>,
}

pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &GruDir) -> Result<Vec<f64>, DetectorError> {
    if x.len() != p.input {
        return Err(DetectorError::Shape { expected: p.input, got: x.len() });
    }
    if h_prev.len() != p.hidden {
        return Err(DetectorError::Shape { expected: p.hidden, got: h_prev.len() });
    }
    Ok(gru_step(p, x, h_prev).h)
}

pub fn bigru_encode(seq: &[Vec<f64>], p: &BiGru) -> Result<Vec<Vec<f64>>, DetectorError> {
    if seq.is_empty() {
        return Err(DetectorError::EmptySequence);
    }
    if let Some(x) = seq.iter().find(|x| x.len() != p.fwd.input) {
        return Err(DetectorError::Shape { expected: p.fwd.input, got: x.len() });
    }
    Ok(bigru_forward(p, seq).out)
}

/// Outputs per position and attention weights `[head][query][key]`.
#[allow(clippy::type_complexity)]
pub fn multi_head_attention(states: &[Vec<f64>], p: &Attention) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>), DetectorError> {
    if p.heads == 0 || p.dim % p.heads != 0 {
        return Err(DetectorError::Config("dim must be divisible by heads".into()));
    }
    if states.is_empty() {
        return Err(DetectorError::EmptySequence);
    }
    if let Some(s) = states.iter().find(|s| s.len() != p.dim) {
        return Err(DetectorError::Shape { expected: p.dim, got: s.len() });
    }
    let cache = attention_forward(p, states);
    Ok((cache.out, cache.weights))
}

fn embed(params: &Params, ids: &[usize]) -> Vec<Vec<f64>> {
    let d = params.dims.embed;
    ids.iter().map(|&i| params.emb[i * d..(i + 1) * d].to_vec()).collect()
}

fn token_ids(model: &DetectorModel, seq: &TokenSeq) -> Result<Vec<usize>, DetectorError> {
    let toks = normalized(seq, model.config.max_seq_len);
    if toks.is_empty() {
        return Err(DetectorError::EmptySequence);
    }
    Ok(model.vocab.ids(&toks))
}

pub fn encode_comment(model: &DetectorModel, comment: &TokenSeq) -> Result<Vec<f64>, DetectorError> {
    let xs = embed(&model.params, &token_ids(model, comment)?);
    Ok(mean_rows(&bigru_forward(&model.params.comment, &xs).out))
}

pub fn encode_diff(model: &DetectorModel, rendered_script: &TokenSeq) -> Result<Vec<f64>, DetectorError> {
    let xs = embed(&model.params, &token_ids(model, rendered_script)?);
    let ys = bigru_forward(&model.params.diff, &xs).out;
    Ok(mean_rows(&attention_forward(&model.params.attn, &ys).out))
}

/// Also the entry point for externally computed `c` and `m` vectors.
pub fn classify(model: &DetectorModel, c: &[f64], m: &[f64]) -> Result<f64, DetectorError> {
    let d = model.params.dims.embed;
    for v in [c, m] {
        if v.len() != d {
            return Err(DetectorError::Shape { expected: d, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DetectorError::NonFinite);
        }
    }
    Ok(classifier_forward(&model.params.cls, c, m).p)
}

pub fn cosine(c: &[f64], m: &[f64]) -> f64 {
    let (nc, nm) = (norm(c), norm(m));
    if nc < COS_GUARD || nm < COS_GUARD {
        0.0
    } else {
        crate::linalg::dot(c, m) / (nc * nm)
    }
}

fn bce(p: f64, y: f64, eps: f64) -> f64 {
    let pc = p.clamp(eps, 1.0 - eps);
    -(y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc))
}

fn similarity_sign(mode: SimilarityMode, y: f64) -> f64 {
    match mode {
        SimilarityMode::Unconditioned => 1.0,
        SimilarityMode::LabelConditioned => 1.0 - 2.0 * y,
    }
}

/// `BCE + λ(1 − mean cos(c_i, m_i))`, with `p` clamped to `[ε, 1−ε]`.
pub fn loss(probs: &[f64], labels: &[f64], cs: &[Vec<f64>], ms: &[Vec<f64>], lambda: f64, eps: f64) -> Result<f64, DetectorError> {
    loss_with_mode(probs, labels, cs, ms, lambda, eps, SimilarityMode::Unconditioned)
}

pub fn loss_with_mode(
    probs: &[f64],
    labels: &[f64],
    cs: &[Vec<f64>],
    ms: &[Vec<f64>],
    lambda: f64,
    eps: f64,
    mode: SimilarityMode,
) -> Result<f64, DetectorError> {
    let n = probs.len();
    if n == 0 {
        return Err(DetectorError::Empty);
    }
    for len in [labels.len(), cs.len(), ms.len()] {
        if len != n {
            return Err(DetectorError::Shape { expected: n, got: len });
        }
    }
    let nf = n as f64;
    let bce_mean: f64 = probs.iter().zip(labels).map(|(p, y)| bce(*p, *y, eps)).sum::<f64>() / nf;
    let cos_mean: f64 = (0..n)
        .map(|i| similarity_sign(mode, labels[i]) * cosine(&cs[i], &ms[i]))
        .sum::<f64>()
        / nf;
    Ok(bce_mean + lambda * (1.0 - cos_mean))
}

struct CaseForward {
    cx: Vec<Vec<f64>>,
    cc: BiGruCache,
    c: Vec<f64>,
    dx: Vec<Vec<f64>>,
    dc: BiGruCache,
    att: AttentionCache,
    m: Vec<f64>,
    cls: ClassifierCache,
}

fn forward_case(params: &Params, case: &EncodedCase) -> CaseForward {
    let cx = embed(params, &case.comment);
    let cc = bigru_forward(&params.comment, &cx);
    let c = mean_rows(&cc.out);
    let dx = embed(params, &case.diff);
    let dc = bigru_forward(&params.diff, &dx);
    let att = attention_forward(&params.attn, &dc.out);
    let m = mean_rows(&att.out);
    let cls = classifier_forward(&params.cls, &c, &m);
    CaseForward { cx, cc, c, dx, dc, att, m, cls }
}

/// Mean loss over `batch` according to `config`.
pub fn batch_loss(params: &Params, batch: &[EncodedCase], config: &DetectorConfig) -> Result<f64, DetectorError> {
    let fwd: Vec<CaseForward> = batch.iter().map(|c| forward_case(params, c)).collect();
    let probs: Vec<f64> = fwd.iter().map(|f| f.cls.p).collect();
    let labels: Vec<f64> = batch.iter().map(|c| c.label).collect();
    let cs: Vec<Vec<f64>> = fwd.iter().map(|f| f.c.clone()).collect();
    let ms: Vec<Vec<f64>> = fwd.iter().map(|f| f.m.clone()).collect();
    loss_with_mode(&probs, &labels, &cs, &ms, config.lambda, config.prob_clamp, config.similarity)
}

fn cosine_grads(c: &[f64], m: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (nc, nm) = (norm(c), norm(m));
    if nc < COS_GUARD || nm < COS_GUARD {
        return None;
    }
    let cos = crate::linalg::dot(c, m) / (nc * nm);
    let gc = c.iter().zip(m).map(|(ci, mi)| mi / (nc * nm) - cos * ci / (nc * nc)).collect();
    let gm = c.iter().zip(m).map(|(ci, mi)| ci / (nc * nm) - cos * mi / (nm * nm)).collect();
    Some((gc, gm))
}

fn scatter_embeddings(grad: &mut Params, ids: &[usize], dxs: &[Vec<f64>]) {
    let d = grad.dims.embed;
    for (&i, dx) in ids.iter().zip(dxs) {
        add_into(&mut grad.emb[i * d..(i + 1) * d], dx);
    }
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn batch_loss_and_grad(params: &Params, batch: &[EncodedCase], config: &DetectorConfig) -> Result<(f64, Params), DetectorError> {
    let loss_value = batch_loss(params, batch, config)?;
    let n = batch.len() as f64;
    let d = params.dims.embed;
    let eps = config.prob_clamp;
    let mut g = params.zeros_like();
    for case in batch {
        let f = forward_case(params, case);
        let p = f.cls.p;
        let dlogit = if p > eps && p < 1.0 - eps { (p - case.label) / n } else { 0.0 };
        let du = classifier_backward(&params.cls, &f.cls, dlogit, &mut g.cls);
        let mut dc = du[..d].to_vec();
        let mut dm = du[d..].to_vec();
        if config.lambda != 0.0 {
            if let Some((gc, gm)) = cosine_grads(&f.c, &f.m) {
                let w = -config.lambda * similarity_sign(config.similarity, case.label) / n;
                for k in 0..d {
                    dc[k] += w * gc[k];
                    dm[k] += w * gm[k];
                }
            }
        }
        let tc = case.comment.len() as f64;
        let dys_c = vec![dc.iter().map(|v| v / tc).collect::<Vec<f64>>(); case.comment.len()];
        let dxc = bigru_backward(&params.comment, &f.cx, &f.cc, &dys_c, &mut g.comment);
        scatter_embeddings(&mut g, &case.comment, &dxc);

        let td = case.diff.len() as f64;
        let dz = vec![dm.iter().map(|v| v / td).collect::<Vec<f64>>(); case.diff.len()];
        let dys_d = attention_backward(&params.attn, &f.dc.out, &f.att, &dz, &mut g.attn);
        let dxd = bigru_backward(&params.diff, &f.dx, &f.dc, &dys_d, &mut g.diff);
        scatter_embeddings(&mut g, &case.diff, &dxd);
    }
    Ok((loss_value, g))
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut Params, max_norm: f64) -> f64 {
    let total = libm::sqrt(grad.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>());
    if max_norm > 0.0 && total > max_norm {
        let k = max_norm / total;
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }
    total
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Minimizes the joint loss with Adam. Parameters and vocabulary come from
/// `init`; hyperparameters from `config`. Deterministic for a fixed seed.
pub fn train(
    init: &DetectorModel,
    train_set: &Corpus,
    valid: Option<&Corpus>,
    config: &DetectorConfig,
) -> Result<(DetectorModel, TrainHistory), DetectorError> {
    // Architecture comes from `init`, optimisation settings from `config`.
    let arch = &init.config;
    let config = DetectorConfig {
        embed_dim: arch.embed_dim,
        gru_hidden: arch.gru_hidden,
        attention_heads: arch.attention_heads,
        vocab_size: arch.vocab_size,
        max_seq_len: arch.max_seq_len,
        ..config.clone()
    };
    config.validate()?;
    if train_set.is_empty() {
        return Err(DetectorError::Empty);
    }
    train_set.require_labels()?;
    let mut model = init.clone();
    model.config = config.clone();
    let data = train_set
        .cases
        .iter()
        .map(|c| model.encode(c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<EncodedCase> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (l, mut g) = batch_loss_and_grad(&model.params, &batch, &config)?;
            total += l * batch.len() as f64;
            clip_grad_norm(&mut g, config.grad_clip);
            adam.step(&mut model.params, &g);
        }
        let valid_f1 = match valid {
            Some(v) if !v.is_empty() => Some(evaluate(&model, v)?.metrics.f1),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: total / data.len() as f64,
            valid_f1,
        });
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub case_id: String,
    pub probability: f64,
    pub verdict: Label,
    #[serde(skip)]
    pub comment_vector: Vec<f64>,
    #[serde(skip)]
    pub code_vector: Vec<f64>,
}

impl Prediction {
    /// Inconsistent iff `p > 0.5`.
    pub fn from_probability(case_id: impl Into<String>, probability: f64) -> Self {
        Prediction {
            case_id: case_id.into(),
            probability,
            verdict: Label::from_bool(probability > 0.5),
            comment_vector: Vec::new(),
            code_vector: Vec::new(),
        }
    }
}

/// Anything that can flag a case; implemented by the trained model and by
/// test stubs.
pub trait Detect {
    fn name(&self) -> &str;
    fn detect(&self, case: &CciCase) -> Result<Prediction, DetectorError>;
}

impl Detect for DetectorModel {
    fn name(&self) -> &str {
        "bigru-attention"
    }

    fn detect(&self, case: &CciCase) -> Result<Prediction, DetectorError> {
        predict(self, case)
    }
}

pub fn predict(model: &DetectorModel, case: &CciCase) -> Result<Prediction, DetectorError> {
    let enc = model.encode(case)?;
    let f = forward_case(&model.params, &enc);
    let mut pred = Prediction::from_probability(case.id.clone(), f.cls.p);
    pred.comment_vector = f.c;
    pred.code_vector = f.m;
    Ok(pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: ClassificationMetrics,
    pub misclassified: Vec<String>,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate(detector: &dyn Detect, corpus: &Corpus) -> Result<Evaluation, DetectorError> {
    corpus.require_labels()?;
    let mut predictions = Vec::with_capacity(corpus.len());
    let mut misclassified = Vec::new();
    let mut preds = Vec::with_capacity(corpus.len());
    let mut labels = Vec::with_capacity(corpus.len());
    for case in &corpus.cases {
        let p = detector.detect(case)?;
        let gold = case.label.expect("labels checked");
        if p.verdict != gold {
            misclassified.push(case.id.clone());
        }
        preds.push(p.verdict);
        labels.push(gold);
        predictions.push(p);
    }
    Ok(Evaluation {
        metrics: classification_metrics(&preds, &labels)?,
        misclassified,
        predictions,
    })
}
