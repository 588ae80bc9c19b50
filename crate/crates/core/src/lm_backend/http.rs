//! OpenAI-compatible HTTP providers.
//!
//! Wire contract:
//! - `POST {base_url}/completions` with `model, prompt, temperature, max_tokens, n, stop`;
//!   reads `choices[i].text`.
//! - `POST {base_url}/embeddings` with `model, input`; reads `data[i].embedding`.
//!
//! The API key comes from `CAKE_FORGE_API_KEY` and is never logged or
//! included in `Debug` output.

use std::fmt;
use std::future::Future;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{
    check_embedding_batch, CompletionProvider, CompletionRequest, CompletionResponse,
    EmbeddingProvider, EmbeddingVector, LmError, API_KEY_ENV,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given the error that ended attempt `attempt` (1-based).
    pub fn delay_after(&self, attempt: u32, err: &LmError) -> Duration {
        let cap = Duration::from_millis(self.max_delay_ms);
        if let LmError::RateLimited { retry_after: Some(hint) } = err {
            return (*hint).min(cap);
        }
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (attempt.saturating_sub(1)).min(20));
        Duration::from_millis(exp).min(cap)
    }

    /// Run `op` until it succeeds, fails with a non-retryable error, or attempts run out.
    pub async fn run<T, F, Fut>(&self, mut op: F) -> Result<T, LmError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, LmError>>,
    {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op().await {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_retryable() => return Err(e),
                Err(e) if attempt >= max => {
                    return Err(LmError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => {
                    let delay = self.delay_after(attempt, &e);
                    warn!(attempt, ?delay, error = %e, "retrying provider request");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl fmt::Debug for HttpSettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpSettings")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout_secs", &self.timeout_secs)
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpSettings {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: None,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }

    /// Picks up the API key from the environment when set.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Clone)]
struct HttpClient {
    client: reqwest::Client,
    settings: HttpSettings,
}

impl HttpClient {
    fn new(settings: HttpSettings) -> Result<Self, LmError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| LmError::Transport(e.to_string()))?;
        Ok(Self { client, settings })
    }

    async fn post_once<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, LmError> {
        let url = format!("{}/{}", self.settings.base_url, path);
        let mut req = self.client.post(&url).json(body);
        if let Some(key) = &self.settings.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| LmError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            let retry_after = resp
                .headers()
                .get(RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s >= 0.0)
                .map(Duration::from_secs_f64);
            return Err(LmError::RateLimited { retry_after });
        }
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| LmError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            return Err(LmError::Status {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).chars().take(512).collect(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| LmError::Protocol(e.to_string()))
    }

    async fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, LmError> {
        self.settings
            .retry
            .run(|| self.post_once(path, body))
            .await
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    n: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionPayload {
    choices: Vec<ChoicePayload>,
}

#[derive(Deserialize)]
struct ChoicePayload {
    text: String,
}

#[derive(Serialize)]
struct EmbeddingBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingPayload {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

pub struct HttpCompletionProvider {
    http: HttpClient,
    id: String,
}

impl HttpCompletionProvider {
    pub fn new(settings: HttpSettings) -> Result<Self, LmError> {
        let id = format!("http-completion:{}", settings.model);
        Ok(Self {
            http: HttpClient::new(settings)?,
            id,
        })
    }
}

#[async_trait]
impl CompletionProvider for HttpCompletionProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LmError> {
        let body = CompletionBody {
            model: &self.http.settings.model,
            prompt: &req.prompt,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            n: req.num_choices,
            stop: req.stop_sequences.as_deref(),
            seed: req.seed,
        };
        let started = Instant::now();
        let payload: CompletionPayload = self.http.post("completions", &body).await?;
        let raw_latency = started.elapsed();
        debug!(choices = payload.choices.len(), ?raw_latency, "completion received");
        if payload.choices.is_empty() {
            return Err(LmError::EmptyResponse);
        }
        Ok(CompletionResponse {
            choices: payload.choices.into_iter().map(|c| c.text).collect(),
            provider_id: self.id.clone(),
            raw_latency,
        })
    }
}

pub struct HttpEmbeddingProvider {
    http: HttpClient,
    id: String,
}

impl HttpEmbeddingProvider {
    pub fn new(settings: HttpSettings) -> Result<Self, LmError> {
        let id = format!("http-embedding:{}", settings.model);
        Ok(Self {
            http: HttpClient::new(settings)?,
            id,
        })
    }
}

#[async_trait]
impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, LmError> {
        let body = EmbeddingBody {
            model: &self.http.settings.model,
            input: texts,
        };
        let payload: EmbeddingPayload = self.http.post("embeddings", &body).await?;
        let mut items = payload.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        let vectors: Vec<EmbeddingVector> = items
            .into_iter()
            .map(|i| EmbeddingVector::new(i.embedding))
            .collect();
        check_embedding_batch(texts.len(), &vectors)?;
        Ok(vectors)
    }
}
