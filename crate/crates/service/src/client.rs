use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use embmark_core::{Embedding, EmbeddingService, Error, Result};

use crate::protocol::{EmbedRequest, EmbedResponse, MAX_BATCH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: usize,
    /// Delay before the first retry; doubled for each later one.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff: Duration::from_millis(100),
        }
    }
}

/// Client for a remote `/v1/embeddings` endpoint.
pub struct HttpEmbeddingService {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    batch_size: usize,
    requests: AtomicUsize,
}

enum Failure {
    Transient(String),
    Permanent(String),
}

impl HttpEmbeddingService {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`; a full
    /// `/v1/embeddings` URL is accepted too.
    pub fn new(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/v1/embeddings") {
            base.to_string()
        } else {
            format!("{base}/v1/embeddings")
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            url,
            agent,
            retry: RetryPolicy::default(),
            batch_size: MAX_BATCH,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Caps the texts per request; clamped to `1..=MAX_BATCH`.
    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.clamp(1, MAX_BATCH);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn post_once(&self, texts: &[String]) -> std::result::Result<Vec<Embedding>, Failure> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let body = EmbedRequest {
            input: texts.to_vec(),
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        if status.is_server_error() {
            return Err(Failure::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(Failure::Permanent(format!("{status}: {text}")));
        }
        let parsed: EmbedResponse = serde_json::from_str(&text)
            .map_err(|e| Failure::Permanent(format!("bad response body: {e}")))?;
        parsed
            .check_aligned(texts.len())
            .map_err(Failure::Permanent)?;
        Ok(parsed
            .data
            .into_iter()
            .map(|item| Embedding::new(item.embedding))
            .collect())
    }

    fn post_with_retry(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let mut delay = self.retry.backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(texts) {
                Ok(out) => return Ok(out),
                Err(Failure::Permanent(msg)) => {
                    return Err(Error::ServiceUnavailable(format!("{}: {msg}", self.url)))
                }
                Err(Failure::Transient(msg)) if attempt >= self.retry.retries => {
                    return Err(Error::ServiceUnavailable(format!(
                        "{}: gave up after {} attempts: {msg}",
                        self.url,
                        attempt + 1
                    )))
                }
                Err(Failure::Transient(msg)) => {
                    log::warn!(
                        "request to {} failed ({msg}); retrying in {delay:?}",
                        self.url
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

impl EmbeddingService for HttpEmbeddingService {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.post_with_retry(chunk)?);
        }
        Ok(out)
    }
}
