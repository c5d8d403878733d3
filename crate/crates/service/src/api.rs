//! Request and response bodies, handlers, and the error body.

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mervin_core::corpus::{Corpus, CorpusCounts};
use mervin_core::domain::KeyframeRecord;
use mervin_core::eval::{self, FrameVerification, ResultItem};
use mervin_core::ingest::{IngestReport, VideoManifest, ingest_video};
use mervin_core::query::{
    QueryConfig, QueryEngine, SummaryHit, TemporalVideoScore, TranscriptHit, VideoGroup, filter_groups_by_videos,
};
use mervin_core::{Error, Providers};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;

pub(crate) struct Shared {
    pub corpus: Corpus,
    pub providers: Providers,
    pub config: ServiceConfig,
}

/// Shared state behind every handler.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Shared>);

impl AppState {
    pub fn corpus(&self) -> &Corpus {
        &self.0.corpus
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    /// Persists the corpus under the store path; returns the snapshot name.
    pub fn snapshot(&self) -> Result<String, Error> {
        let dir = self.0.corpus.save(&self.0.config.store_path)?;
        Ok(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
    }
}

/// Error body `{error, message}` with its status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    /// Bad input on a search endpoint is reported as `invalid_query`.
    fn for_query(self) -> Self {
        if self.status == StatusCode::BAD_REQUEST {
            ApiError {
                code: "invalid_query",
                ..self
            }
        } else {
            self
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::InvalidSubmission(_) | Error::NoSummary(_) | Error::NoPair(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::ProviderUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            Error::CorruptStore(_) | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_argument", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = ErrorBody {
            error: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

fn with_engine<T>(state: &AppState, config: QueryConfig, f: impl FnOnce(&QueryEngine<'_>) -> Result<T, Error>) -> Result<T, Error> {
    let engine = QueryEngine::new(&state.0.corpus, &state.0.providers, config)?;
    f(&engine)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ingest", post(ingest))
        .route("/search/frames", post(search_frames))
        .route("/search/transcripts", post(search_transcripts))
        .route("/search/summaries", post(search_summaries))
        .route("/search/temporal", post(search_temporal))
        .route("/videos/{id}", get(video))
        .route("/videos/{id}/keyframes", get(video_keyframes))
        .route("/submission/verify", post(submission_verify))
        .route("/submission/build", post(submission_build))
        .route("/submission/archive", get(submission_archive))
        .route("/snapshot", post(snapshot))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(flatten)]
    pub counts: CorpusCounts,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        counts: state.corpus().counts(),
    })
}

async fn ingest(State(state): State<AppState>, body: Result<Json<VideoManifest>, JsonRejection>) -> ApiResult<IngestReport> {
    let Json(manifest) = body?;
    let report = blocking(move || {
        let s = &state.0;
        ingest_video(&manifest, &s.config.ingest, &s.providers, &s.corpus)
    })
    .await?;
    tracing::info!(video_id = %report.video_id, keyframes = report.n_keyframes, "ingested");
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSearchRequest {
    pub query: String,
    pub k: Option<usize>,
    /// Keeps only groups from these videos, e.g. the result of a summary search.
    pub allowed_videos: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameSearchResponse {
    pub groups: Vec<VideoGroup>,
}

async fn search_frames(State(state): State<AppState>, body: Result<Json<FrameSearchRequest>, JsonRejection>) -> ApiResult<FrameSearchResponse> {
    let Json(req) = body.map_err(|e| ApiError::from(e).for_query())?;
    let mut config = state.config().query.clone();
    config.frame_k = req.k.unwrap_or(config.frame_k);
    let groups = blocking(move || with_engine(&state, config, |e| e.frame_search(&req.query)).map(|g| (g, req.allowed_videos)))
        .await
        .map_err(ApiError::for_query)?;
    let groups = match groups {
        (g, Some(allowed)) => filter_groups_by_videos(g, &allowed.into_iter().collect::<BTreeSet<_>>()),
        (g, None) => g,
    };
    Ok(Json(FrameSearchResponse { groups }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptSearchRequest {
    pub query: String,
    pub k: Option<usize>,
    pub keyword: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranscriptSearchResponse {
    pub hits: Vec<TranscriptHit>,
}

async fn search_transcripts(
    State(state): State<AppState>,
    body: Result<Json<TranscriptSearchRequest>, JsonRejection>,
) -> ApiResult<TranscriptSearchResponse> {
    let Json(req) = body.map_err(|e| ApiError::from(e).for_query())?;
    let mut config = state.config().query.clone();
    config.transcript_k = req.k.unwrap_or(config.transcript_k);
    let hits = blocking(move || with_engine(&state, config, |e| e.transcript_search(&req.query, req.keyword.as_deref())))
        .await
        .map_err(ApiError::for_query)?;
    Ok(Json(TranscriptSearchResponse { hits }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySearchRequest {
    pub query: String,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummarySearchResponse {
    pub hits: Vec<SummaryHit>,
}

async fn search_summaries(
    State(state): State<AppState>,
    body: Result<Json<SummarySearchRequest>, JsonRejection>,
) -> ApiResult<SummarySearchResponse> {
    let Json(req) = body.map_err(|e| ApiError::from(e).for_query())?;
    let mut config = state.config().query.clone();
    config.summary_k = req.k.unwrap_or(config.summary_k);
    let hits = blocking(move || with_engine(&state, config, |e| e.summary_search(&req.query)))
        .await
        .map_err(ApiError::for_query)?;
    Ok(Json(SummarySearchResponse { hits }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSearchRequest {
    pub e1: String,
    pub e2: String,
    pub max_gap_s: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TemporalSearchResponse {
    pub videos: Vec<TemporalVideoScore>,
}

async fn search_temporal(
    State(state): State<AppState>,
    body: Result<Json<TemporalSearchRequest>, JsonRejection>,
) -> ApiResult<TemporalSearchResponse> {
    let Json(req) = body.map_err(|e| ApiError::from(e).for_query())?;
    let mut config = state.config().query.clone();
    config.frame_k = req.k.unwrap_or(config.frame_k);
    config.temporal_max_gap_s = req.max_gap_s.unwrap_or(config.temporal_max_gap_s);
    let videos = blocking(move || with_engine(&state, config, |e| e.temporal_search(&req.e1, &req.e2)))
        .await
        .map_err(ApiError::for_query)?;
    Ok(Json(TemporalSearchResponse { videos }))
}

/// Playback metadata. Videos are never proxied; the console plays
/// `source_url` directly and maps player time to frames with `fps`.
#[derive(Debug, Serialize, Deserialize)]
pub struct VideoInfo {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub source_url: String,
    pub fps: f64,
    pub duration_s: f64,
    pub last_frame: u64,
    pub n_keyframes: usize,
    pub n_intervals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

fn lookup(state: &AppState, id: &str) -> Result<mervin_core::VideoHandle, ApiError> {
    state
        .corpus()
        .video(id)
        .ok_or_else(|| Error::NotFound(format!("video {id} is not in the corpus")).into())
}

async fn video(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<VideoInfo> {
    let handle = lookup(&state, &id)?;
    let entry = handle.entry();
    let meta = &entry.meta;
    Ok(Json(VideoInfo {
        video_id: meta.video_id.clone(),
        title: meta.title.clone(),
        source_url: meta.source_url.clone(),
        fps: meta.fps,
        duration_s: meta.duration_s,
        last_frame: meta.last_frame(),
        n_keyframes: entry.keyframes.len(),
        n_intervals: entry.intervals.len(),
        summary: entry.summary.as_ref().map(|s| s.summary_text.clone()),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KeyframeList {
    pub video_id: String,
    pub fps: f64,
    pub keyframes: Vec<KeyframeRecord>,
}

async fn video_keyframes(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<KeyframeList> {
    let handle = lookup(&state, &id)?;
    let entry = handle.entry();
    Ok(Json(KeyframeList {
        video_id: entry.meta.video_id.clone(),
        fps: entry.meta.fps,
        keyframes: entry.keyframes.clone(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequest {
    pub video_id: String,
    pub frame_index: u64,
}

async fn submission_verify(State(state): State<AppState>, body: Result<Json<VerifyRequest>, JsonRejection>) -> ApiResult<FrameVerification> {
    let Json(req) = body?;
    let handle = lookup(&state, &req.video_id)?;
    Ok(Json(eval::verify_frame(&handle.entry().meta, req.frame_index)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildRequest {
    pub query_id: String,
    pub items: Vec<ResultItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BuildResponse {
    pub query_id: String,
    pub n_items: usize,
    pub archive: String,
}

async fn submission_build(State(state): State<AppState>, body: Result<Json<BuildRequest>, JsonRejection>) -> ApiResult<BuildResponse> {
    let Json(req) = body?;
    let n_items = req.items.len();
    let query_id = req.query_id.clone();
    blocking(move || {
        let path = state.config().submission_path();
        let corpus = state.corpus();
        eval::build_submission(&path, &req.query_id, &req.items, |id| corpus.video(id).map(|v| v.entry().meta.clone()))
    })
    .await?;
    Ok(Json(BuildResponse {
        query_id,
        n_items,
        archive: "/submission/archive".into(),
    }))
}

async fn submission_archive(State(state): State<AppState>) -> Result<Response, ApiError> {
    let path = state.config().submission_path();
    let bytes = blocking(move || match fs::read(&path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::NotFound("no submission has been built yet".into())),
        Err(e) => Err(e.into()),
    })
    .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"submission.zip\""),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotResponse {
    pub snapshot: String,
    #[serde(flatten)]
    pub counts: CorpusCounts,
}

async fn snapshot(State(state): State<AppState>) -> ApiResult<SnapshotResponse> {
    let counts = state.corpus().counts();
    let snapshot = blocking(move || state.snapshot()).await?;
    Ok(Json(SnapshotResponse { snapshot, counts }))
}
