//! Chat-completion request types and the backend trait used by the
//! LLM-driven stages. Transports live in the `cci` crate.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Deterministic decoding (temperature 0).
    pub fn new(messages: Vec<ChatMessage>, max_tokens: u32) -> Self {
        ChatRequest {
            messages,
            temperature: 0.0,
            max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("empty completion")]
    EmptyCompletion,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("configuration: {0}")]
    Config(String),
}

/// Anything that turns a chat request into completion text.
pub trait ChatBackend {
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;

    /// Completes every request, keeping result order aligned with input order.
    /// Transports with real concurrency override this.
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        (**self).complete_batch(requests)
    }
}

/// Rejects requests with empty message content.
pub fn validate_request(request: &ChatRequest) -> Result<(), BackendError> {
    if request.messages.is_empty() {
        return Err(BackendError::InvalidRequest("no messages".into()));
    }
    if request.messages.iter().any(|m| m.content.trim().is_empty()) {
        return Err(BackendError::InvalidRequest("message content must be non-empty".into()));
    }
    Ok(())
}
