//! Chat-completion transports: HTTP with retries, file replay, and stubs.
//! Every attempt can be appended to a JSONL transcript, which doubles as the
//! replay file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use cci_core::llm::validate_request;
use cci_core::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::read_jsonl;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Replay,
    Stub,
}

/// One configured endpoint. `kind` selects the transport; fields that do not
/// apply to it are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpoint {
    pub name: String,
    pub kind: BackendKind,
    pub base_url: String,
    pub model_id: String,
    /// Environment variable holding the API key, if the endpoint needs one.
    pub api_key_env: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// First retry delay; each further retry doubles it.
    pub backoff_base_s: f64,
    /// Transcript to replay from (`replay` kind).
    pub replay_path: Option<PathBuf>,
    /// Fixed completion (`stub` kind).
    pub reply: String,
    pub latency_ms: u64,
}

impl Default for LlmEndpoint {
    fn default() -> Self {
        LlmEndpoint {
            name: String::new(),
            kind: BackendKind::Http,
            base_url: String::new(),
            model_id: String::new(),
            api_key_env: None,
            timeout_s: 60.0,
            max_retries: 3,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            backoff_base_s: 1.0,
            replay_path: None,
            reply: String::new(),
            latency_ms: 0,
        }
    }
}

impl LlmEndpoint {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::Config(format!("endpoint `{}`: {m}", self.name)));
        if self.name.trim().is_empty() {
            return bad("name must be non-empty");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad("timeout_s must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if !(self.backoff_base_s >= 0.0 && self.backoff_base_s.is_finite()) {
            return bad("backoff_base_s must be non-negative");
        }
        match self.kind {
            BackendKind::Http if self.base_url.is_empty() || self.model_id.is_empty() => bad("http endpoints need base_url and model_id"),
            BackendKind::Replay if self.replay_path.is_none() => bad("replay endpoints need replay_path"),
            _ => Ok(()),
        }
    }
}

/// Stable identity of a request sent to a named backend.
pub fn request_key(backend: &str, request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(backend.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(request).expect("requests serialize"));
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub timestamp: f64,
    pub backend: String,
    pub key: String,
    pub attempt: u32,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_s: f64,
}

enum Sink {
    Off,
    Memory(Vec<TranscriptEntry>),
    File(BufWriter<File>),
}

/// Serialized append-only log of request attempts.
pub struct Transcript {
    sink: Mutex<Sink>,
}

impl Transcript {
    pub fn off() -> Arc<Self> {
        Arc::new(Transcript { sink: Mutex::new(Sink::Off) })
    }

    pub fn memory() -> Arc<Self> {
        Arc::new(Transcript {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        })
    }

    /// Appends to `path`, creating it if needed.
    pub fn append_to(path: &Path) -> std::io::Result<Arc<Self>> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Arc::new(Transcript {
            sink: Mutex::new(Sink::File(BufWriter::new(file))),
        }))
    }

    pub fn log(&self, entry: TranscriptEntry) {
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *sink {
            Sink::Off => {}
            Sink::Memory(v) => v.push(entry),
            Sink::File(w) => {
                let line = serde_json::to_string(&entry).expect("entries serialize");
                // A transcript write failure must not fail the request.
                let _ = writeln!(w, "{line}").and_then(|_| w.flush());
            }
        }
    }

    /// In-memory entries; empty for other sinks.
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        match &*self.sink.lock().unwrap_or_else(|e| e.into_inner()) {
            Sink::Memory(v) => v.clone(),
            _ => Vec::new(),
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn log_attempt(
    transcript: &Transcript,
    backend: &str,
    key: &str,
    attempt: u32,
    request: &ChatRequest,
    result: &Result<String, BackendError>,
    started: Instant,
) {
    transcript.log(TranscriptEntry {
        timestamp: unix_now(),
        backend: backend.to_string(),
        key: key.to_string(),
        attempt,
        request: request.clone(),
        response: result.as_ref().ok().cloned(),
        error: result.as_ref().err().map(|e| e.to_string()),
        latency_s: started.elapsed().as_secs_f64(),
    });
}

/// Runs `f` over `items` with at most `max_in_flight` calls pending,
/// returning results in input order.
pub fn run_bounded<T: Sync, R: Send>(items: &[T], max_in_flight: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Transport(_) => true,
        BackendError::Status { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

/// Extracts `choices[0].message.content`.
pub fn parse_chat_response(body: &str) -> Result<String, BackendError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    Ok(content.to_string())
}

/// OpenAI-style `POST {base_url}/chat/completions` client.
pub struct HttpBackend {
    endpoint: LlmEndpoint,
    api_key: Option<String>,
    agent: ureq::Agent,
    transcript: Arc<Transcript>,
}

impl HttpBackend {
    pub fn new(endpoint: LlmEndpoint, transcript: Arc<Transcript>) -> Result<Self, BackendError> {
        endpoint.validate()?;
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Config(format!("environment variable `{var}` is not set")))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            endpoint,
            api_key,
            agent,
            transcript,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = WireRequest {
            model: &self.endpoint.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut req = self.agent.post(self.url()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        parse_chat_response(&text)
    }
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    /// Retries transport failures, 429 and 5xx with exponential backoff.
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        validate_request(request)?;
        let key = request_key(&self.endpoint.name, request);
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            let result = self.attempt(request);
            log_attempt(&self.transcript, &self.endpoint.name, &key, attempt, request, &result, started);
            match result {
                Err(e) if retryable(&e) && attempt < self.endpoint.max_retries => {
                    let delay = self.endpoint.backoff_base_s * 2f64.powi(attempt as i32);
                    std::thread::sleep(Duration::from_secs_f64(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        run_bounded(requests, self.endpoint.max_in_flight, |r| self.complete(r))
    }
}

/// Serves completions recorded in a transcript, keyed by backend name and
/// request.
pub struct ReplayBackend {
    name: String,
    recorded: BTreeMap<String, String>,
    transcript: Arc<Transcript>,
}

impl ReplayBackend {
    pub fn from_entries(name: impl Into<String>, entries: impl IntoIterator<Item = TranscriptEntry>, transcript: Arc<Transcript>) -> Self {
        let name = name.into();
        let recorded = entries
            .into_iter()
            .filter(|e| e.backend == name)
            .filter_map(|e| e.response.map(|r| (e.key, r)))
            .collect();
        ReplayBackend { name, recorded, transcript }
    }

    pub fn load(name: impl Into<String>, path: &Path, transcript: Arc<Transcript>) -> Result<Self, BackendError> {
        let (entries, _) = read_jsonl::<TranscriptEntry>(path, false).map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self::from_entries(name, entries, transcript))
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        let key = request_key(&self.name, request);
        let result = self.recorded.get(&key).cloned().ok_or_else(|| BackendError::ReplayMiss(key.clone()));
        log_attempt(&self.transcript, &self.name, &key, 0, request, &result, started);
        result
    }
}

type Responder = Box<dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync>;

/// In-process backend with a scripted responder and optional fixed latency.
pub struct StubBackend {
    name: String,
    responder: Responder,
    latency: Duration,
    max_in_flight: usize,
    calls: AtomicUsize,
    transcript: Arc<Transcript>,
}

impl StubBackend {
    pub fn new(name: impl Into<String>, responder: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        StubBackend {
            name: name.into(),
            responder: Box::new(responder),
            latency: Duration::ZERO,
            max_in_flight: 1,
            calls: AtomicUsize::new(0),
            transcript: Transcript::off(),
        }
    }

    pub fn fixed(name: impl Into<String>, reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::new(name, move |_| Ok(reply.clone()))
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_transcript(mut self, transcript: Arc<Transcript>) -> Self {
        self.transcript = transcript;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for StubBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let started = Instant::now();
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let result = validate_request(request).and_then(|_| (self.responder)(request));
        let key = request_key(&self.name, request);
        log_attempt(&self.transcript, &self.name, &key, 0, request, &result, started);
        result
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        run_bounded(requests, self.max_in_flight, |r| self.complete(r))
    }
}

pub type SharedBackend = Box<dyn ChatBackend + Send + Sync>;

/// Builds the transport named by `endpoint.kind`.
pub fn build_backend(endpoint: &LlmEndpoint, transcript: Arc<Transcript>) -> Result<SharedBackend, BackendError> {
    endpoint.validate()?;
    Ok(match endpoint.kind {
        BackendKind::Http => Box::new(HttpBackend::new(endpoint.clone(), transcript)?),
        BackendKind::Replay => {
            let path = endpoint.replay_path.as_deref().expect("validated");
            Box::new(ReplayBackend::load(endpoint.name.clone(), path, transcript)?)
        }
        BackendKind::Stub => Box::new(
            StubBackend::fixed(endpoint.name.clone(), endpoint.reply.clone())
                .with_latency(Duration::from_millis(endpoint.latency_ms))
                .with_max_in_flight(endpoint.max_in_flight)
                .with_transcript(transcript),
        ),
    })
}
