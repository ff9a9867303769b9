//! Chat-completion transport shared by the step judge and the synthesis
//! agents.
//!
//! Speaks the widely deployed `POST /chat/completions` JSON protocol. The
//! [`ChatBackend`] trait lets tests and offline runs swap in deterministic
//! backends.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("unexpected response body: {0}")]
    Malformed(String),
}

/// Something that turns a conversation into one assistant message.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).complete(messages)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Blocking HTTP client for a chat-completion endpoint.
pub struct HttpChatClient {
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// `endpoint` is either the API base (e.g. `http://host/v1`) or the full
    /// `.../chat/completions` URL.
    pub fn new(
        endpoint: &str,
        model: impl Into<String>,
        temperature: f64,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpChatClient {
            url,
            model: model.into(),
            temperature,
            api_key,
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(CompletionRequest {
                model: &self.model,
                messages,
                temperature: self.temperature,
            })
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(LlmError::Status(status));
        }
        let body: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Malformed(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("no choices".into()))
    }
}

/// Calls `backend` up to `1 + retry_limit` times. Only transport-level and
/// 5xx/429 failures are retried.
pub fn complete_with_retries(
    backend: &dyn ChatBackend,
    messages: &[ChatMessage],
    retry_limit: u32,
    backoff: Duration,
) -> Result<String, LlmError> {
    let mut attempt = 0;
    loop {
        match backend.complete(messages) {
            Ok(s) => return Ok(s),
            Err(e) => {
                let retryable = match &e {
                    LlmError::Transport(_) => true,
                    LlmError::Status(s) => *s == 429 || *s >= 500,
                    LlmError::Malformed(_) => false,
                };
                if !retryable || attempt >= retry_limit {
                    return Err(e);
                }
                attempt += 1;
                if !backoff.is_zero() {
                    std::thread::sleep(backoff * 2u32.saturating_pow(attempt - 1).min(16));
                }
            }
        }
    }
}

/// Exact-match response cache in front of another backend.
pub struct CachedBackend<B> {
    inner: B,
    cache: Mutex<HashMap<Vec<ChatMessage>, String>>,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        CachedBackend { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(messages) {
            return Ok(hit.clone());
        }
        let out = self.inner.complete(messages)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(messages.to_vec(), out.clone());
        Ok(out)
    }
}

/// Backend that replays a fixed script of replies in call order, then keeps
/// returning the last one. Useful for exercising retry and parse paths.
pub struct ScriptedBackend {
    replies: Mutex<std::collections::VecDeque<Result<String, LlmError>>>,
    last: Mutex<Option<Result<String, LlmError>>>,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<Result<String, LlmError>>) -> Self {
        ScriptedBackend {
            replies: Mutex::new(replies.into()),
            last: Mutex::new(None),
            calls: Default::default(),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, LlmError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let next = self.replies.lock().expect("script lock").pop_front();
        let mut last = self.last.lock().expect("script lock");
        match next {
            Some(r) => {
                *last = Some(r.clone());
                r
            }
            None => last
                .clone()
                .unwrap_or_else(|| Err(LlmError::Transport("script exhausted".into()))),
        }
    }
}

/// Backend computed by a closure over the conversation, for deterministic
/// offline generators.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        (self.0)(messages)
    }
}
