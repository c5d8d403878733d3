//! Embedding and text-transform provider contracts.
//!
//! Two implementations ship: a deterministic built-in family (character
//! 3-gram feature hashing and rule-based cleaning) used for tests and
//! desk-scale corpora, and a remote HTTP client that any model server can sit
//! behind.

mod builtin;
mod remote;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::Embedding;
use crate::error::{Error, Result};

pub use builtin::{BuiltinEmbedder, BuiltinTransformer, IdentityTransformer, clean_text};
pub use remote::{RemoteClient, RemoteEmbedder, RemoteTransformer, RetryPolicy};

pub const DEFAULT_DIM: usize = 256;
pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Clean,
    Summarize,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Clean => "clean",
            TransformKind::Summarize => "summarize",
        })
    }
}

/// Output of a text transform. `tokens` is set when the provider reports
/// usage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transformed {
    pub text: String,
    pub tokens: Option<u64>,
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>>;

    fn embed_images(&self, image_refs: &[String]) -> Result<Vec<Embedding>>;

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        single(self.embed_texts(&[text.to_owned()])?)
    }

    fn embed_image(&self, image_ref: &str) -> Result<Embedding> {
        single(self.embed_images(&[image_ref.to_owned()])?)
    }
}

pub trait TextTransformer: Send + Sync {
    fn transform(&self, kind: TransformKind, text: &str) -> Result<Transformed>;

    fn transform_text(&self, kind: TransformKind, text: &str) -> Result<String> {
        self.transform(kind, text).map(|t| t.text)
    }
}

fn single(mut v: Vec<Embedding>) -> Result<Embedding> {
    match (v.pop(), v.is_empty()) {
        (Some(e), true) => Ok(e),
        _ => Err(Error::ProviderUnavailable(
            "provider returned the wrong number of vectors".into(),
        )),
    }
}

pub(crate) fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::invalid("input text is empty"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint_url: Option<String>,
    pub dim: usize,
    pub timeout_ms: u64,
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    /// Sentences kept by the built-in summarizer.
    pub summary_sentences: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Builtin,
            endpoint_url: None,
            dim: DEFAULT_DIM,
            timeout_ms: 10_000,
            api_key_env: None,
            max_in_flight: 8,
            summary_sentences: 3,
        }
    }
}

impl ProviderConfig {
    pub fn remote(endpoint_url: impl Into<String>, dim: usize) -> Self {
        ProviderConfig {
            kind: ProviderKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_DIM {
            return Err(Error::invalid(format!(
                "embedding dim must be at least {MIN_DIM}, got {}",
                self.dim
            )));
        }
        if self.timeout_ms == 0 || self.max_in_flight == 0 || self.summary_sentences == 0 {
            return Err(Error::invalid(
                "timeout_ms, max_in_flight and summary_sentences must be positive",
            ));
        }
        if self.kind == ProviderKind::Remote && self.endpoint_url.as_deref().is_none_or(str::is_empty)
        {
            return Err(Error::invalid("remote provider requires endpoint_url"));
        }
        Ok(())
    }

    fn client(&self) -> Result<RemoteClient> {
        let api_key = match &self.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::invalid(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(RemoteClient::new(
            self.endpoint_url.clone().unwrap_or_default(),
            Duration::from_millis(self.timeout_ms),
            api_key,
            self.max_in_flight,
            RetryPolicy::default(),
        ))
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Builtin => Arc::new(BuiltinEmbedder::new(self.dim)?),
            ProviderKind::Remote => Arc::new(RemoteEmbedder::new(self.client()?, self.dim)),
        })
    }

    pub fn build_transformer(&self) -> Result<Arc<dyn TextTransformer>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Builtin => Arc::new(BuiltinTransformer::new(self.summary_sentences)),
            ProviderKind::Remote => Arc::new(RemoteTransformer::new(self.client()?)),
        })
    }
}

/// Provider settings for one deployment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub text: ProviderConfig,
    pub image: ProviderConfig,
    pub transform: ProviderConfig,
}

/// The provider set used by ingest and search.
///
/// `image` embeds keyframes and also encodes frame-search queries (its text
/// tower), since keyframe vectors live in the visual model's joint space.
/// `text` embeds transcripts and summaries and their queries.
#[derive(Clone)]
pub struct Providers {
    pub text: Arc<dyn Embedder>,
    pub image: Arc<dyn Embedder>,
    pub transform: Arc<dyn TextTransformer>,
}

impl Providers {
    pub fn builtin(dim: usize) -> Result<Self> {
        let embedder = Arc::new(BuiltinEmbedder::new(dim)?);
        Ok(Providers {
            text: embedder.clone(),
            image: embedder,
            transform: Arc::new(BuiltinTransformer::default()),
        })
    }

    pub fn from_config(config: &ProvidersConfig) -> Result<Self> {
        Ok(Providers {
            text: config.text.build_embedder()?,
            image: config.image.build_embedder()?,
            transform: config.transform.build_transformer()?,
        })
    }
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers")
            .field("text_dim", &self.text.dim())
            .field("image_dim", &self.image.dim())
            .finish_non_exhaustive()
    }
}
