//! Text-completion and text-embedding providers.
//!
//! Two provider families sit behind the same traits:
//! - [`mock`]: deterministic, offline providers driven by a fixture table and
//!   seeded hashing. Used by tests and for dry runs of the whole pipeline.
//! - [`http`]: OpenAI-compatible `/completions` and `/embeddings` endpoints,
//!   with retry, backoff and rate-limit handling.
//!
//! Callers go through [`complete`] and [`embed`], which validate requests and
//! enforce the response contracts regardless of provider.

pub mod http;
pub mod mock;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpCompletionProvider, HttpEmbeddingProvider, HttpSettings, RetryPolicy};
pub use mock::{FixtureTable, MockCompletionProvider, MockEmbeddingProvider};

/// Environment variable holding the API key for HTTP providers.
pub const API_KEY_ENV: &str = "CAKE_FORGE_API_KEY";

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 20;
pub const DEFAULT_NUM_CHOICES: u32 = 5;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("provider returned no choices")]
    EmptyResponse,
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LmError> },
}

impl LmError {
    /// Transport failures, 429s and 5xx responses are worth retrying.
    /// Every other 4xx is final.
    pub fn is_retryable(&self) -> bool {
        match self {
            LmError::Transport(_) | LmError::RateLimited { .. } => true,
            LmError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    /// Token budget per choice. Passed through to the endpoint, never enforced locally.
    pub max_tokens: u32,
    /// Number of completions requested for the prompt (over-generation count).
    pub num_choices: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_sequences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CompletionRequest {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            num_choices: DEFAULT_NUM_CHOICES,
            stop_sequences: None,
            seed: None,
        }
    }
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            ..Self::default()
        }
    }

    /// Copy of `self` with the prompt replaced.
    pub fn with_prompt(&self, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.num_choices < 1 {
            return Err(LmError::InvalidRequest("num_choices must be >= 1".into()));
        }
        if self.max_tokens < 1 {
            return Err(LmError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    /// Completions in provider order.
    pub choices: Vec<String>,
    pub provider_id: String,
    pub raw_latency: Duration,
}

/// Dense text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<EmbeddingVector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(EmbeddingVector::new(self.values.iter().map(|v| v / n).collect()))
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Option<f64> {
        let (a, b) = (self.normalized()?, other.normalized()?);
        Some(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
    }
}

#[async_trait]
pub trait CompletionProvider: Send + Sync {
    /// Identifier recorded in manifests, e.g. `mock:seed=7` or `http:gpt-3.5-turbo-instruct`.
    fn id(&self) -> &str;

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LmError>;
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, LmError>;
}

/// Validated completion call.
pub async fn complete(
    provider: &dyn CompletionProvider,
    req: &CompletionRequest,
) -> Result<CompletionResponse, LmError> {
    req.validate()?;
    let resp = provider.complete(req).await?;
    if resp.choices.is_empty() {
        return Err(LmError::EmptyResponse);
    }
    Ok(resp)
}

/// Validated embedding call: one vector per text, order preserved, uniform dimension.
pub async fn embed(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, LmError> {
    if texts.is_empty() {
        return Err(LmError::InvalidRequest("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(LmError::InvalidRequest(format!("text {i} is empty")));
    }
    let vectors = provider.embed(texts).await?;
    check_embedding_batch(texts.len(), &vectors)?;
    Ok(vectors)
}

pub(crate) fn check_embedding_batch(
    expected: usize,
    vectors: &[EmbeddingVector],
) -> Result<(), LmError> {
    if vectors.len() != expected {
        return Err(LmError::Protocol(format!(
            "expected {expected} embeddings, got {}",
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        if first.dim() == 0 {
            return Err(LmError::Protocol("zero-length embedding".into()));
        }
        if let Some(bad) = vectors.iter().position(|v| v.dim() != first.dim()) {
            return Err(LmError::Protocol(format!(
                "embedding {bad} has dim {} but batch dim is {}",
                vectors[bad].dim(),
                first.dim()
            )));
        }
    }
    Ok(())
}

/// Embed in fixed-size chunks so large corpora do not hit request-size limits.
pub async fn embed_chunked(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
    chunk_size: usize,
) -> Result<Vec<EmbeddingVector>, LmError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(chunk_size.max(1)) {
        out.extend(embed(provider, chunk).await?);
    }
    check_embedding_batch(texts.len(), &out)?;
    Ok(out)
}
