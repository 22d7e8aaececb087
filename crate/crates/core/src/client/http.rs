//! HTTP chat backend speaking the `/chat/completions` wire protocol.
//!
//! Request body: `{model, messages, temperature, max_tokens}`. The reply
//! text is read from `choices[0].message.content`. Transport failures and
//! 5xx statuses are retried up to `retry_limit` times; schema problems and
//! 4xx statuses are not retried.

use super::{check_request, BackendConfig, ChatBackend, ChatMessage, ClientError};
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionsResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint_url.trim_end_matches('/')
        )
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, AttemptError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature.unwrap_or(0.0),
            "max_tokens": self.config.max_tokens,
        });
        let mut request = self.agent.post(self.endpoint());
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Retryable(format!("body read failed: {e}")))?;
        if (500..600).contains(&status) {
            return Err(AttemptError::Retryable(format!("server error {status}")));
        }
        if status != 200 {
            return Err(AttemptError::Fatal(ClientError::Protocol(format!(
                "unexpected status {status}: {}",
                truncate(&text, 200)
            ))));
        }
        let parsed: CompletionsResponse = serde_json::from_str(&text).map_err(|e| {
            AttemptError::Fatal(ClientError::Protocol(format!(
                "malformed response body: {e}"
            )))
        })?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| {
            AttemptError::Fatal(ClientError::Protocol("response has no choices".into()))
        })?;
        Ok(choice.message.content)
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(ClientError),
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        check_request(messages)?;
        let attempts = self.config.retry_limit + 1;
        let mut last_message = String::new();
        for _ in 0..attempts {
            match self.attempt(messages) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => last_message = msg,
            }
        }
        Err(ClientError::Transport {
            attempts,
            message: last_message,
        })
    }
}
