//! Chat-completion dispatch with retries, timeouts and bounded concurrency.
//!
//! Requests go out in the OpenAI-compatible chat-completions shape. The
//! [`ChatBackend`] trait separates transport from policy: [`HttpBackend`]
//! talks to a real endpoint, [`MockBackend`] replays scripted outcomes and
//! records what it was sent.

mod cache;
mod http;
mod mock;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

pub use cache::ResponseCache;
pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::{MockBackend, MockOutcome, MockStats};

use crate::model::RunConfig;
use crate::prompt::PromptSpec;

/// How the endpoint accepts a top-k cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopKDialect {
    /// A top-level `top_k` field (vLLM, SGLang, llama.cpp server, Ollama).
    #[default]
    Extension,
    /// The endpoint rejects unknown sampling fields; top-k is not sent.
    Unsupported,
}

/// Whether top-k actually reached the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopKStatus {
    Sent,
    Unsupported,
}

impl TopKDialect {
    pub fn status(self) -> TopKStatus {
        match self {
            TopKDialect::Extension => TopKStatus::Sent,
            TopKDialect::Unsupported => TopKStatus::Unsupported,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub request_id: String,
    pub model_name: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Takes model and decoding settings from `cfg`.
    pub fn new(request_id: impl Into<String>, prompt: &PromptSpec, cfg: &RunConfig) -> Self {
        Self {
            request_id: request_id.into(),
            model_name: cfg.model_name.clone(),
            system_text: prompt.system_text.clone(),
            user_text: prompt.user_text.clone(),
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            top_k: cfg.top_k,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// JSON body posted to `{endpoint}/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequestBody {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub stream: bool,
}

impl ChatRequestBody {
    pub fn build(req: &CompletionRequest, dialect: TopKDialect) -> Self {
        Self {
            model: req.model_name.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: req.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: req.user_text.clone(),
                },
            ],
            temperature: req.temperature,
            top_p: req.top_p,
            top_k: match dialect {
                TopKDialect::Extension => Some(req.top_k),
                TopKDialect::Unsupported => None,
            },
            seed: req.seed,
            stream: false,
        }
    }
}

/// One completion as returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub finish_reason: String,
}

impl ChatReply {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: "stop".into(),
        }
    }
}

/// Failure of a single attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptError {
    #[error("transport error: {message}")]
    Transport { message: String },
    #[error("request timed out after {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {message}")]
    Protocol { message: String },
}

impl AttemptError {
    pub fn transport(message: impl fmt::Display) -> Self {
        AttemptError::Transport {
            message: message.to_string(),
        }
    }

    pub fn protocol(message: impl fmt::Display) -> Self {
        AttemptError::Protocol {
            message: message.to_string(),
        }
    }

    /// Connection failures, timeouts, 408/409/429 and 5xx are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            AttemptError::Transport { .. } | AttemptError::Timeout { .. } => true,
            AttemptError::Http { status, .. } => {
                matches!(status, 408 | 409 | 429) || (500..600).contains(status)
            }
            AttemptError::Protocol { .. } => false,
        }
    }
}

/// Final failure of a request after all attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{last} (after {attempts} attempt(s){})", if *.exhausted { ", retries exhausted" } else { "" })]
pub struct CompletionError {
    pub last: AttemptError,
    pub attempts: u32,
    /// True when the error was retryable but the retry budget ran out.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub request_id: String,
    pub raw_text: String,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub attempt_count: u32,
    pub finish_reason: String,
    pub top_k_status: TopKStatus,
    #[serde(default)]
    pub cached: bool,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Transport to a chat-completions endpoint.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn send(&self, body: &ChatRequestBody) -> Result<ChatReply, AttemptError>;
}

#[async_trait]
impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    async fn send(&self, body: &ChatRequestBody) -> Result<ChatReply, AttemptError> {
        (**self).send(body).await
    }
}

/// Retry policy and wire options.
#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub top_k_dialect: TopKDialect,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            top_k_dialect: TopKDialect::Extension,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
        }
    }
}

/// `min(base * 2^(retry - 1), max)` for the 1-based retry number.
pub fn backoff_delay(retry: u32, base: Duration, max: Duration) -> Duration {
    let factor = 1u32 << retry.saturating_sub(1).min(20);
    base.saturating_mul(factor).min(max)
}

pub struct Gateway<B> {
    backend: B,
    options: GatewayOptions,
    cache: Option<ResponseCache>,
}

impl<B: ChatBackend> Gateway<B> {
    pub fn new(backend: B) -> Self {
        Self::with_options(backend, GatewayOptions::default())
    }

    pub fn with_options(backend: B, options: GatewayOptions) -> Self {
        Self {
            backend,
            options,
            cache: None,
        }
    }

    /// Enables the content-addressed response cache.
    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn options(&self) -> &GatewayOptions {
        &self.options
    }

    pub fn top_k_status(&self) -> TopKStatus {
        self.options.top_k_dialect.status()
    }

    pub async fn complete(
        &self,
        req: CompletionRequest,
        cfg: &RunConfig,
    ) -> Result<CompletionResult, CompletionError> {
        let body = ChatRequestBody::build(&req, self.options.top_k_dialect);
        let started = Instant::now();

        if let Some(reply) = self.cache.as_ref().and_then(|c| c.get(&body)) {
            return Ok(self.result(req.request_id, reply, started, 1, true));
        }

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let outcome = match tokio::time::timeout(cfg.request_timeout, self.backend.send(&body)).await {
                Ok(Ok(reply)) if reply.text.is_empty() && reply.finish_reason == "stop" => {
                    Err(AttemptError::protocol("empty completion with finish_reason stop"))
                }
                Ok(outcome) => outcome,
                Err(_) => Err(AttemptError::Timeout {
                    timeout_ms: cfg.request_timeout.as_millis() as u64,
                }),
            };
            match outcome {
                Ok(reply) => {
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(&body, &reply) {
                            warn!(error = %e, "could not write response cache");
                        }
                    }
                    return Ok(self.result(req.request_id, reply, started, attempt, false));
                }
                Err(err) => {
                    let retryable = err.is_retryable();
                    if !retryable || attempt > cfg.max_retries {
                        warn!(request_id = %req.request_id, attempt, error = %err, "completion failed");
                        return Err(CompletionError {
                            last: err,
                            attempts: attempt,
                            exhausted: retryable,
                        });
                    }
                    let delay = backoff_delay(attempt, self.options.backoff_base, self.options.backoff_max);
                    debug!(request_id = %req.request_id, attempt, delay_ms = delay.as_millis() as u64, error = %err, "retrying");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    fn result(
        &self,
        request_id: String,
        reply: ChatReply,
        started: Instant,
        attempt_count: u32,
        cached: bool,
    ) -> CompletionResult {
        CompletionResult {
            request_id,
            raw_text: reply.text,
            latency: started.elapsed(),
            attempt_count,
            finish_reason: reply.finish_reason,
            top_k_status: self.top_k_status(),
            cached,
        }
    }

    /// Results in request order with at most `cfg.max_concurrency` requests
    /// in flight.
    pub fn complete_stream<'a>(
        &'a self,
        requests: Vec<CompletionRequest>,
        cfg: &'a RunConfig,
    ) -> impl Stream<Item = Result<CompletionResult, CompletionError>> + 'a {
        stream::iter(requests)
            .map(move |req| self.complete(req, cfg))
            .buffered(cfg.max_concurrency.max(1))
    }

    pub async fn complete_batch(
        &self,
        requests: Vec<CompletionRequest>,
        cfg: &RunConfig,
    ) -> Vec<Result<CompletionResult, CompletionError>> {
        self.complete_stream(requests, cfg).collect().await
    }
}
