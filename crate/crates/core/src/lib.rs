//! Multimodal event retrieval over news-video corpora.
//!
//! Videos arrive as manifests of precomputed shot boundaries and ASR
//! segments. Ingest samples keyframes, groups and cleans transcripts,
//! summarizes each video and indexes everything into exact vector
//! collections. The query engine answers frame, transcript, summary and
//! two-event temporal queries; the evaluation module scores ranked
//! results and packages submissions.

pub mod corpus;
pub mod domain;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod providers;
pub mod query;
pub mod vectorstore;

pub use corpus::{Corpus, CorpusCounts, CorpusDims, VideoEntry, VideoHandle};
pub use error::{Error, Result};
pub use ingest::{IngestConfig, IngestReport, VideoManifest, ingest_video};
pub use providers::{Providers, ProvidersConfig};
pub use query::{QueryConfig, QueryEngine};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
