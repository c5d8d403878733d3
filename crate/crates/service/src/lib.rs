//! HTTP service over a retrieval corpus.
//!
//! All bodies are JSON. Errors carry `{error, message}` where `error` is a
//! stable code; status codes are 400 for bad input, 404 for unknown ids,
//! 409 for duplicate ingest and 503 when a model provider is unreachable.

mod api;
mod config;

use std::fs;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::http::{HeaderValue, Method, header};
use mervin_core::corpus::{Corpus, CorpusDims};
use mervin_core::Providers;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use api::{
    AppState, BuildResponse, FrameSearchResponse, Health, KeyframeList, SnapshotResponse, SummarySearchResponse,
    TemporalSearchResponse, TranscriptSearchResponse, VideoInfo, router,
};
pub use config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("store: {0}")]
    Store(#[from] mervin_core::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AppState {
    /// Builds providers and opens (or creates) the store.
    pub fn open(config: ServiceConfig) -> Result<Self, StartupError> {
        config.validate()?;
        let providers = Providers::from_config(&config.providers)?;
        fs::create_dir_all(&config.store_path)?;
        let corpus = Corpus::open(&config.store_path, CorpusDims::from_providers(&providers))?;
        Ok(Self::from_parts(corpus, providers, config))
    }

    pub fn from_parts(corpus: Corpus, providers: Providers, config: ServiceConfig) -> Self {
        AppState(Arc::new(api::Shared {
            corpus,
            providers,
            config,
        }))
    }
}

fn cors(origins: &[String]) -> Result<Option<CorsLayer>, StartupError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| StartupError::Config(format!("bad CORS origin {o:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(values)
    };
    Ok(Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE]),
    ))
}

/// A running service.
pub struct ServiceHandle {
    addr: SocketAddr,
    state: AppState,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub async fn snapshot(&self) -> Result<String, mervin_core::Error> {
        let state = self.state.clone();
        tokio::task::spawn_blocking(move || state.snapshot())
            .await
            .map_err(|e| mervin_core::Error::Io(io::Error::other(e)))?
    }

    /// Stops accepting requests, drains in-flight ones, and snapshots the
    /// store when configured to.
    pub async fn shutdown(mut self) -> Result<(), StartupError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        (&mut self.task).await.map_err(io::Error::other)??;
        if self.state.config().snapshot_on_shutdown {
            let name = self.snapshot().await?;
            tracing::info!(snapshot = %name, "store saved");
        }
        Ok(())
    }
}

/// Opens the store and starts serving on `config.bind_address`.
pub async fn serve(config: ServiceConfig) -> Result<ServiceHandle, StartupError> {
    let addr = config.bind_address.clone();
    let state = tokio::task::spawn_blocking(move || AppState::open(config))
        .await
        .map_err(io::Error::other)??;
    serve_state(state, &addr).await
}

/// Starts serving an already-built state.
pub async fn serve_state(state: AppState, addr: &str) -> Result<ServiceHandle, StartupError> {
    let listener = TcpListener::bind(addr).await.map_err(|source| StartupError::Bind {
        addr: addr.to_owned(),
        source,
    })?;
    let local = listener.local_addr()?;
    let mut app = router(state.clone());
    if let Some(layer) = cors(&state.config().cors_allowed_origins)? {
        app = app.layer(layer);
    }
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(addr = %local, "listening");
    Ok(ServiceHandle {
        addr: local,
        state,
        stop: Some(stop),
        task,
    })
}

/// Serves until Ctrl-C, then shuts down cleanly.
pub fn run(config: ServiceConfig) -> Result<(), StartupError> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let handle = serve(config).await?;
        eprintln!("listening on http://{}", handle.local_addr());
        tokio::signal::ctrl_c().await?;
        handle.shutdown().await
    })
}
