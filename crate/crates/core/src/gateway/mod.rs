//! Provider-agnostic chat and embedding access with record/replay.
//!
//! A [`Gateway`] wraps a chat provider and an embedding provider. In
//! [`GatewayMode::Record`] every chat exchange is appended to a cassette; in
//! [`GatewayMode::Replay`] responses come only from the cassette, keyed by a
//! fingerprint of the whitespace-normalized request.

mod cassette;
mod embed;
mod http;
pub mod offline;
mod structured;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use cassette::{fingerprint, Cassette, CassetteEntry, EntryKind};
pub use embed::{HashEmbedder, HASH_MODEL_ID};
pub use http::{HttpConfig, HttpProvider, ENV_API_KEY, ENV_BASE_URL, ENV_CHAT_MODEL, ENV_EMBED_MODEL};
pub use offline::OfflineModel;
pub use structured::{extract_structured, Shape};

/// Embedding model named by default for live embedding endpoints.
pub const DEFAULT_EMBED_MODEL: &str = "all-MiniLM-L6-v2";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response truncated at max_tokens ({completion_tokens} completion tokens)")]
    Truncated { content: String, completion_tokens: u32 },
    #[error("provider reported an error: {0}")]
    Provider(String),
    #[error("replay miss for {kind} request {fingerprint}; the prompt is not reproducible")]
    ReplayMiss { kind: String, fingerprint: String },
    #[error("fingerprint collision on {0}")]
    Collision(String),
    #[error("cassette I/O: {0}")]
    Cassette(String),
    #[error("embedding dimension {got} does not match {expected} for model {model}")]
    Dimension { model: String, expected: usize, got: usize },
    #[error("no structured document found in response")]
    NoDocument,
    #[error("structured response is missing field(s): {}", missing.join(", "))]
    ShapeMismatch { missing: Vec<String> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no {0} provider configured")]
    NotConfigured(&'static str),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport { .. } => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseShape {
    #[default]
    Text,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    #[serde(default)]
    pub response_shape: ResponseShape,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        ChatRequest {
            messages,
            temperature: 0.0,
            max_tokens: 2048,
            model_id: String::new(),
            response_shape: ResponseShape::Text,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn structured(mut self) -> Self {
        self.response_shape = ResponseShape::Structured;
        self
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        let first =
            self.messages.first().ok_or_else(|| GatewayError::InvalidRequest("messages must not be empty".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest("first message must be a system or user message".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse { content: content.into(), finish_reason: FinishReason::Stop, usage: Usage::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
    /// Local deterministic embedders need no cassette entries.
    fn is_local(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, base_delay_ms: 250, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Counting semaphore for the in-flight cap.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Everything except the providers themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub mode: GatewayMode,
    pub cassette: Option<PathBuf>,
    pub chat_model: String,
    pub embed_model: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            mode: GatewayMode::Live,
            cassette: None,
            chat_model: "gpt-5-mini".into(),
            embed_model: DEFAULT_EMBED_MODEL.into(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct Gateway {
    settings: GatewaySettings,
    chat: Option<Arc<dyn ChatProvider>>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
    cassette: Option<Mutex<Cassette>>,
    limiter: Limiter,
    attempts: AtomicU64,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.settings.mode)
            .field("cassette", &self.settings.cassette)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Opens (or creates, in record mode) the configured cassette.
    pub fn new(
        settings: GatewaySettings,
        chat: Option<Arc<dyn ChatProvider>>,
        embedder: Option<Arc<dyn EmbeddingProvider>>,
    ) -> Result<Self, GatewayError> {
        let cassette = match (settings.mode, &settings.cassette) {
            (GatewayMode::Live, _) => None,
            (GatewayMode::Replay, Some(p)) => Some(Cassette::load(p)?),
            (GatewayMode::Record, Some(p)) => Some(Cassette::open_for_append(p)?),
            (_, None) => {
                return Err(GatewayError::Cassette(format!("{} mode requires a cassette path", settings.mode)))
            }
        };
        Ok(Gateway {
            limiter: Limiter::new(settings.max_in_flight),
            settings,
            chat,
            embedder,
            cassette: cassette.map(Mutex::new),
            attempts: AtomicU64::new(0),
            embed_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Live gateway over the rule-based offline model and hash embedder.
    pub fn offline() -> Self {
        Gateway::new(
            GatewaySettings {
                chat_model: offline::MODEL_ID.into(),
                embed_model: embed::HASH_MODEL_ID.into(),
                ..GatewaySettings::default()
            },
            Some(Arc::new(OfflineModel::new())),
            Some(Arc::new(HashEmbedder::default())),
        )
        .expect("live gateway needs no cassette")
    }

    /// Replays `cassette` with the hash embedder for embeddings.
    pub fn replay(cassette: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Gateway::new(
            GatewaySettings {
                mode: GatewayMode::Replay,
                cassette: Some(cassette.into()),
                chat_model: offline::MODEL_ID.into(),
                embed_model: embed::HASH_MODEL_ID.into(),
                ..GatewaySettings::default()
            },
            None,
            Some(Arc::new(HashEmbedder::default())),
        )
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn mode(&self) -> GatewayMode {
        self.settings.mode
    }

    /// Provider attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn cassette_len(&self) -> usize {
        self.cassette.as_ref().map_or(0, |c| c.lock().unwrap().len())
    }

    fn with_retry<T>(&self, mut call: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let max = self.settings.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let err = match call() {
                Ok(v) => return Ok(v),
                Err(e) => e,
            };
            if !err.retryable() || attempt >= max {
                return Err(match err {
                    GatewayError::Transport { message, .. } => GatewayError::Transport { attempts: attempt, message },
                    other => other,
                });
            }
            log::warn!("attempt {attempt}/{max} failed: {err}; backing off");
            std::thread::sleep(self.settings.retry.delay(attempt));
        }
    }

    fn fill_model(&self, req: &ChatRequest) -> ChatRequest {
        let mut req = req.clone();
        if req.model_id.is_empty() {
            req.model_id = self.settings.chat_model.clone();
        }
        req
    }

    /// One chat completion. A `length` finish reason surfaces as
    /// [`GatewayError::Truncated`].
    pub fn complete_chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.check()?;
        let req = self.fill_model(req);
        let normalized = cassette::normalize_chat(&req);
        let fp = fingerprint(&normalized);
        let resp = match self.settings.mode {
            GatewayMode::Replay => self.replay_entry(&fp, EntryKind::Chat)?,
            GatewayMode::Live => self.call_provider(&req)?,
            GatewayMode::Record => {
                if let Some(hit) = self.recorded(&fp, &normalized)? {
                    hit
                } else {
                    let resp = self.call_provider(&req)?;
                    let entry = CassetteEntry {
                        fingerprint: fp,
                        kind: EntryKind::Chat,
                        request: normalized,
                        response: serde_json::to_value(&resp).expect("response serializes"),
                    };
                    self.cassette.as_ref().unwrap().lock().unwrap().append(entry)?;
                    resp
                }
            }
        };
        match resp.finish_reason {
            FinishReason::Length => {
                Err(GatewayError::Truncated { content: resp.content, completion_tokens: resp.usage.completion_tokens })
            }
            FinishReason::Error => Err(GatewayError::Provider(resp.content)),
            FinishReason::Stop => Ok(resp),
        }
    }

    fn call_provider(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let chat = self.chat.as_ref().ok_or(GatewayError::NotConfigured("chat"))?;
        let _permit = self.limiter.acquire();
        self.with_retry(|| chat.complete(req))
    }

    fn recorded(&self, fp: &str, normalized: &Value) -> Result<Option<ChatResponse>, GatewayError> {
        let cassette = self.cassette.as_ref().unwrap().lock().unwrap();
        match cassette.get(fp) {
            None => Ok(None),
            Some(e) if e.request != *normalized => Err(GatewayError::Collision(fp.to_string())),
            Some(e) => Ok(Some(
                serde_json::from_value(e.response.clone()).map_err(|err| GatewayError::Cassette(err.to_string()))?,
            )),
        }
    }

    fn replay_entry(&self, fp: &str, kind: EntryKind) -> Result<ChatResponse, GatewayError> {
        let cassette = self.cassette.as_ref().unwrap().lock().unwrap();
        match cassette.get(fp) {
            Some(e) if e.kind == kind => {
                serde_json::from_value(e.response.clone()).map_err(|err| GatewayError::Cassette(err.to_string()))
            }
            _ => Err(GatewayError::ReplayMiss { kind: kind.to_string(), fingerprint: fp.to_string() }),
        }
    }

    /// Completes and parses a structured document, sending up to two
    /// corrective follow-ups when extraction fails.
    pub fn complete_structured(&self, req: &ChatRequest, shape: &Shape) -> Result<Value, GatewayError> {
        let mut req = req.clone();
        req.response_shape = ResponseShape::Structured;
        let mut last_err = GatewayError::NoDocument;
        for _ in 0..3 {
            let resp = self.complete_chat(&req)?;
            match extract_structured(&resp.content, shape) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    req.messages.push(Message::assistant(resp.content));
                    req.messages.push(Message::user(format!(
                        "Your reply could not be used: {e}. Reply with only the corrected JSON document."
                    )));
                    last_err = e;
                }
            }
        }
        Err(last_err)
    }

    /// Embeds each text, order-preserving. Local embedders bypass the
    /// cassette; remote ones are recorded and replayed like chat requests.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("texts must not be empty".into()));
        }
        let embedder = self.embedder.as_ref().ok_or(GatewayError::NotConfigured("embedding"))?;
        let model = embedder.model_id().to_string();
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.embed_cache.lock().unwrap();
            for t in texts {
                if !cache.contains_key(t) && !missing.contains(t) {
                    missing.push(t.clone());
                }
            }
        }
        if !missing.is_empty() {
            let vectors = if embedder.is_local() || self.settings.mode == GatewayMode::Live {
                if embedder.is_local() {
                    embedder.embed(&missing)?
                } else {
                    let _permit = self.limiter.acquire();
                    self.with_retry(|| embedder.embed(&missing))?
                }
            } else {
                self.embed_via_cassette(embedder.as_ref(), &missing)?
            };
            let mut cache = self.embed_cache.lock().unwrap();
            let expected = cache.values().next().map(Vec::len);
            for (t, v) in missing.into_iter().zip(vectors) {
                if let Some(expected) = expected {
                    if v.len() != expected {
                        return Err(GatewayError::Dimension { model, expected, got: v.len() });
                    }
                }
                cache.insert(t, v);
            }
        }
        let cache = self.embed_cache.lock().unwrap();
        Ok(texts.iter().map(|t| EmbeddingVector { values: cache[t].clone(), model_id: model.clone() }).collect())
    }

    fn embed_via_cassette(
        &self,
        embedder: &dyn EmbeddingProvider,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, GatewayError> {
        let normalized = cassette::normalize_embed(embedder.model_id(), texts);
        let fp = fingerprint(&normalized);
        let mut cassette = self.cassette.as_ref().unwrap().lock().unwrap();
        if let Some(e) = cassette.get(&fp) {
            if e.kind == EntryKind::Embed {
                return serde_json::from_value(e.response.clone())
                    .map_err(|err| GatewayError::Cassette(err.to_string()));
            }
        }
        if self.settings.mode == GatewayMode::Replay {
            return Err(GatewayError::ReplayMiss { kind: EntryKind::Embed.to_string(), fingerprint: fp });
        }
        let vectors = self.with_retry(|| embedder.embed(texts))?;
        cassette.append(CassetteEntry {
            fingerprint: fp,
            kind: EntryKind::Embed,
            request: normalized,
            response: serde_json::to_value(&vectors).expect("vectors serialize"),
        })?;
        Ok(vectors)
    }

    /// Convenience: cosine similarity of two texts.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, GatewayError> {
        let v = self.embed_texts(&[a.to_string(), b.to_string()])?;
        Ok(crate::text::cosine(&v[0].values, &v[1].values))
    }
}
