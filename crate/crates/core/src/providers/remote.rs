//! HTTP client for remote model servers.
//!
//! Wire contract:
//!
//! * embeddings: `POST {texts: [..]}` or `POST {image_refs: [..]}` answered by
//!   `{vectors: [[f32]], dim}`;
//! * transforms: `POST {kind: "clean"|"summarize", text}` answered by
//!   `{text, tokens?}`.
//!
//! Credentials travel as a bearer token. Timeouts, transport errors and 5xx
//! responses are retried with exponential backoff; anything still failing
//! surfaces as [`Error::ProviderUnavailable`].

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Embedder, TextTransformer, TransformKind, Transformed, require_text};
use crate::domain::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            free: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    in_flight: InFlight,
    retry: RetryPolicy,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl RemoteClient {
    pub fn new(
        endpoint: String,
        timeout: Duration,
        api_key: Option<String>,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        RemoteClient {
            agent: ureq::Agent::new_with_config(config),
            endpoint,
            api_key,
            in_flight: InFlight::new(max_in_flight),
            retry,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let _permit = self.in_flight.acquire();
        let mut last = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.try_post(body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(msg)) => return Err(Error::ProviderUnavailable(msg)),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(Error::ProviderUnavailable(format!(
            "{} failed after {} attempts: {last}",
            self.endpoint,
            self.retry.retries + 1
        )))
    }

    fn try_post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, Attempt> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("server answered {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("{} rejected request with {status}", self.endpoint)));
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| Attempt::Fatal(format!("malformed response from {}: {e}", self.endpoint)))
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum EmbedRequest<'a> {
    Texts { texts: &'a [String] },
    Images { image_refs: &'a [String] },
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    client: RemoteClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(client: RemoteClient, dim: usize) -> Self {
        RemoteEmbedder { client, dim }
    }

    fn embed(&self, req: EmbedRequest<'_>, expected: usize) -> Result<Vec<Embedding>> {
        if expected == 0 {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.client.post(&req)?;
        if resp.dim != self.dim {
            return Err(Error::ProviderUnavailable(format!(
                "provider dim {} does not match configured dim {}",
                resp.dim, self.dim
            )));
        }
        if resp.vectors.len() != expected {
            return Err(Error::ProviderUnavailable(format!(
                "provider returned {} vectors for {expected} inputs",
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::ProviderUnavailable(format!(
                        "vector of length {} from a dim-{} provider",
                        v.len(),
                        self.dim
                    )));
                }
                Embedding::normalize(v).map_err(|e| Error::ProviderUnavailable(e.to_string()))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        for t in texts {
            require_text(t)?;
        }
        self.embed(EmbedRequest::Texts { texts }, texts.len())
    }

    fn embed_images(&self, image_refs: &[String]) -> Result<Vec<Embedding>> {
        if image_refs.iter().any(String::is_empty) {
            return Err(Error::invalid("image reference is empty"));
        }
        self.embed(EmbedRequest::Images { image_refs }, image_refs.len())
    }
}

#[derive(Serialize)]
struct TransformRequest<'a> {
    kind: TransformKind,
    text: &'a str,
}

#[derive(Deserialize)]
struct TransformResponse {
    text: String,
    #[serde(default)]
    tokens: Option<u64>,
}

#[derive(Debug)]
pub struct RemoteTransformer {
    client: RemoteClient,
}

impl RemoteTransformer {
    pub fn new(client: RemoteClient) -> Self {
        RemoteTransformer { client }
    }
}

impl TextTransformer for RemoteTransformer {
    fn transform(&self, kind: TransformKind, text: &str) -> Result<Transformed> {
        require_text(text)?;
        let resp: TransformResponse = self.client.post(&TransformRequest { kind, text })?;
        Ok(Transformed {
            text: resp.text,
            tokens: resp.tokens,
        })
    }
}
