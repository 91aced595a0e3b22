//! Embedding-backed relevance.
//!
//! Wire protocol: `POST {endpoint}` with `{"texts": [..], "model": ..}` and a
//! bearer token when a credential is configured; the service answers
//! `{"vectors": [[..], ..]}` with one fixed-dimension vector per text.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RelevanceProvider, SegmentContext};
use crate::error::ProviderError;
use crate::types::Ad;

/// Moves texts to an embedding service and back.
pub trait EmbeddingTransport: Send + Sync {
    /// One vector per input text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub endpoint: String,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub attempts: u32,
    /// Delay before the second attempt; doubles on every further retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl EmbeddingConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        EmbeddingConfig {
            endpoint: endpoint.into(),
            model: None,
            api_key_env: None,
            timeout: Duration::from_secs(30),
            attempts: 3,
            backoff: Duration::from_millis(200),
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Blocking HTTP transport for the `{texts} -> {vectors}` protocol.
pub struct HttpEmbeddingTransport {
    agent: ureq::Agent,
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
}

impl HttpEmbeddingTransport {
    /// Reads the credential eagerly so a missing key fails before any request.
    pub fn new(config: &EmbeddingConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ProviderError::AuthMissing(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder().timeout_global(Some(config.timeout)).build().into();
        Ok(HttpEmbeddingTransport { agent, endpoint: config.endpoint.clone(), model: config.model.clone(), api_key })
    }
}

fn unavailable(message: impl ToString) -> ProviderError {
    ProviderError::ServiceUnavailable { attempts: 1, message: message.to_string() }
}

impl EmbeddingTransport for HttpEmbeddingTransport {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = EmbedRequest { texts, model: self.model.as_deref() };
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(unavailable)?;
        let parsed: EmbedResponse = response.body_mut().read_json().map_err(unavailable)?;
        if parsed.vectors.len() != texts.len() {
            return Err(unavailable(format!("expected {} vectors, got {}", texts.len(), parsed.vectors.len())));
        }
        Ok(parsed.vectors)
    }
}

/// In-memory transport returning fixed vectors per text, for tests and demos.
///
/// Unknown texts fail with `ServiceUnavailable`, as would an unreachable
/// service. `failures` makes the first calls fail to exercise retries.
#[derive(Debug, Default)]
pub struct MockEmbeddingTransport {
    vectors: HashMap<String, Vec<f64>>,
    failures: AtomicU64,
    calls: AtomicU64,
}

impl MockEmbeddingTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.vectors.insert(text.into(), vector);
        self
    }

    pub fn failing_first(self, failures: u64) -> Self {
        self.failures.store(failures, Ordering::SeqCst);
        self
    }

    /// Number of `embed` calls received, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl EmbeddingTransport for MockEmbeddingTransport {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let failing = self.failures.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |f| f.checked_sub(1)).is_ok();
        if failing {
            return Err(unavailable("injected failure"));
        }
        texts
            .iter()
            .map(|t| self.vectors.get(t).cloned().ok_or_else(|| unavailable(format!("no vector for {t:?}"))))
            .collect()
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Gate { free: Mutex::new(limit.max(1)), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

/// Caching, retrying, rate-bounded embedding client.
pub struct EmbeddingClient<T> {
    transport: T,
    model: String,
    attempts: u32,
    backoff: Duration,
    gate: Gate,
    cache: RwLock<HashMap<[u8; 32], Arc<Vec<f64>>>>,
    requests: AtomicU64,
}

impl<T: EmbeddingTransport> EmbeddingClient<T> {
    pub fn new(transport: T, config: &EmbeddingConfig) -> Self {
        EmbeddingClient {
            transport,
            model: config.model.clone().unwrap_or_default(),
            attempts: config.attempts.max(1),
            backoff: config.backoff,
            gate: Gate::new(config.max_in_flight),
            cache: RwLock::new(HashMap::new()),
            requests: AtomicU64::new(0),
        }
    }

    /// Requests that reached the transport (cache hits excluded, retries included).
    pub fn network_requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn key(&self, text: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    pub fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError> {
        let key = self.key(text);
        if let Some(v) = self.cache.read().unwrap().get(&key) {
            return Ok(Arc::clone(v));
        }
        let texts = [text.to_string()];
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.gate.run(|| self.transport.embed(&texts)) {
                Ok(mut vectors) if vectors.len() == 1 => {
                    let v = Arc::new(vectors.pop().unwrap());
                    return Ok(Arc::clone(self.cache.write().unwrap().entry(key).or_insert(v)));
                }
                Ok(vectors) => last = format!("expected 1 vector, got {}", vectors.len()),
                Err(ProviderError::ServiceUnavailable { message, .. }) => last = message,
                Err(other) => return Err(other),
            }
            if attempt < self.attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(ProviderError::ServiceUnavailable { attempts: self.attempts, message: last })
    }

    /// `clamp(cos(embed(a), embed(b)), 0, 1)`.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        let (x, y) = (self.embed(a)?, self.embed(b)?);
        Ok(cosine(&x, &y)?.clamp(0.0, 1.0))
    }
}

/// Cosine similarity; zero vectors are similar to nothing.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ProviderError> {
    if a.len() != b.len() {
        return Err(ProviderError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Relevance as clamped cosine similarity between query and ad document.
pub struct EmbeddingRelevance<T> {
    client: EmbeddingClient<T>,
}

impl<T: EmbeddingTransport> EmbeddingRelevance<T> {
    pub fn new(client: EmbeddingClient<T>) -> Self {
        EmbeddingRelevance { client }
    }

    pub fn client(&self) -> &EmbeddingClient<T> {
        &self.client
    }
}

impl<T: EmbeddingTransport> RelevanceProvider for EmbeddingRelevance<T> {
    fn relevance(&self, query: &str, ad: &Ad, _index: usize, _ctx: &SegmentContext<'_>) -> Result<f64, ProviderError> {
        self.client.similarity(query, &ad.document)
    }
}

/// Relevance provider talking to the configured HTTP embedding service.
pub fn embedding_relevance(
    config: &EmbeddingConfig,
) -> Result<EmbeddingRelevance<HttpEmbeddingTransport>, ProviderError> {
    Ok(EmbeddingRelevance::new(EmbeddingClient::new(HttpEmbeddingTransport::new(config)?, config)))
}

/// Clamped cosine similarity of two texts under `client`'s embeddings.
pub fn output_similarity<T: EmbeddingTransport>(
    a: &str,
    b: &str,
    client: &EmbeddingClient<T>,
) -> Result<f64, ProviderError> {
    client.similarity(a, b)
}
