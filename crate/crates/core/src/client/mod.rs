//! Chat backends and the prompt/parse layer around them.
//!
//! A [`ChatBackend`] turns a message list into one assistant reply. Two
//! implementations ship with the harness: an HTTP client speaking the
//! `/chat/completions` wire protocol used by most model servers, and a
//! fully deterministic [`mock::MockBackend`] for offline tests and
//! reproducible rollouts. Prompt builders and response parsers are pure
//! functions; backends are stateless and safe to share across threads.

pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockRole, ScriptEntry};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Message role on the chat wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

/// One message exchanged with a chat backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// Connection settings for an HTTP chat backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    /// Base URL; the client posts to `{endpoint_url}/chat/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    /// Sampling temperature; unset inherits the caller's decode default
    /// and is sent as 0.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry_limit: u32,
    /// Bearer token sent as `Authorization: Bearer <key>`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "local-model".into(),
            temperature: None,
            max_tokens: default_max_tokens(),
            timeout_ms: default_timeout_ms(),
            retry_limit: 0,
            api_key: None,
        }
    }
}

/// Experiences retrieved for prompt augmentation: (state, action, reward)
/// triples in retrieval order, at most `top_k` of them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub experiences: Vec<RetrievedExperience>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExperience {
    pub state_text: String,
    pub action_text: String,
    pub reward: f64,
}

impl RetrievedContext {
    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    /// Network failure, timeout, or server-side error after all retries.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The response arrived but does not follow the wire schema.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// The request violates the wire contract (empty, or no leading system
    /// message); callers construct messages through the prompt builders,
    /// which never produce this.
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A chat completion backend: message list in, assistant text out.
pub trait ChatBackend: Send + Sync {
    fn chat_complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError>;
}

pub(crate) fn check_request(messages: &[ChatMessage]) -> Result<(), ClientError> {
    if messages.is_empty() {
        return Err(ClientError::InvalidRequest("empty message list".into()));
    }
    if messages[0].role != ChatRole::System {
        return Err(ClientError::InvalidRequest(
            "first message must have the system role".into(),
        ));
    }
    Ok(())
}
