//! Ingest and search through the HTTP provider client against an in-process
//! model server that wraps the built-in models. Results must equal a run on
//! the built-in providers directly.

use std::sync::Arc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use axum::Json;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use mervin_core::corpus::{Corpus, CorpusDims};
use mervin_core::ingest::{IngestConfig, VideoManifest, ingest_video};
use mervin_core::providers::{
    BuiltinEmbedder, BuiltinTransformer, Embedder, RemoteClient, RemoteEmbedder, RemoteTransformer, RetryPolicy,
    TextTransformer, TransformKind,
};
use mervin_core::{Error, Providers, QueryConfig, QueryEngine};
use serde_json::{Value, json};

const DIM: usize = 64;
const KEY: &str = "test-key";

#[derive(Default)]
struct Server {
    calls: AtomicUsize,
    /// The first `flaky` requests answer 503.
    flaky: usize,
}

type Reply = (StatusCode, Json<Value>);

fn authorized(headers: &HeaderMap) -> bool {
    headers.get("authorization").and_then(|v| v.to_str().ok()) == Some(&format!("Bearer {KEY}"))
}

fn gate(server: &Server, headers: &HeaderMap) -> Option<Reply> {
    if server.calls.fetch_add(1, Ordering::SeqCst) < server.flaky {
        return Some((StatusCode::SERVICE_UNAVAILABLE, Json(json!({}))));
    }
    (!authorized(headers)).then(|| (StatusCode::UNAUTHORIZED, Json(json!({}))))
}

async fn embed(State(server): State<Arc<Server>>, headers: HeaderMap, Json(body): Json<Value>) -> Reply {
    if let Some(r) = gate(&server, &headers) {
        return r;
    }
    let model = BuiltinEmbedder::new(DIM).unwrap();
    let strings = |k: &str| -> Option<Vec<String>> { serde_json::from_value(body.get(k)?.clone()).ok() };
    let vectors = match (strings("texts"), strings("image_refs")) {
        (Some(t), None) => model.embed_texts(&t),
        (None, Some(i)) => model.embed_images(&i),
        _ => return (StatusCode::BAD_REQUEST, Json(json!({}))),
    }
    .unwrap();
    // scale by 3 so the client has to renormalize
    let vectors: Vec<Vec<f32>> = vectors.iter().map(|e| e.values().iter().map(|x| x * 3.0).collect()).collect();
    (StatusCode::OK, Json(json!({"vectors": vectors, "dim": DIM})))
}

async fn transform(State(server): State<Arc<Server>>, headers: HeaderMap, Json(body): Json<Value>) -> Reply {
    if let Some(r) = gate(&server, &headers) {
        return r;
    }
    let kind: TransformKind = serde_json::from_value(body["kind"].clone()).unwrap();
    let out = BuiltinTransformer::default().transform_text(kind, body["text"].as_str().unwrap()).unwrap();
    (StatusCode::OK, Json(json!({"text": out, "tokens": 7})))
}

/// Starts a model server on its own runtime thread; returns its base URL.
fn start(server: Arc<Server>) -> String {
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    std_listener.set_nonblocking(true).unwrap();
    let addr = std_listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let app = axum::Router::new()
                .route("/embed", post(embed))
                .route("/transform", post(transform))
                .with_state(server);
            let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{addr}")
}

fn client(url: String, key: Option<&str>) -> RemoteClient {
    let retry = RetryPolicy {
        retries: 2,
        initial_backoff: Duration::from_millis(5),
    };
    RemoteClient::new(url, Duration::from_secs(5), key.map(str::to_owned), 4, retry)
}

fn remote_providers(base: &str) -> Providers {
    let embedder = || Arc::new(RemoteEmbedder::new(client(format!("{base}/embed"), Some(KEY)), DIM));
    Providers {
        text: embedder(),
        image: embedder(),
        transform: Arc::new(RemoteTransformer::new(client(format!("{base}/transform"), Some(KEY)))),
    }
}

fn manifest() -> VideoManifest {
    let texts = [
        "Chiều nay,   Quốc hội thông qua luật đất đai sửa đổi.",
        "Mưa lớn kéo dài gây ngập nhiều tuyến phố.",
        "Đội tuyển bóng đá nữ giành huy chương vàng.",
        "Giá xăng giảm lần thứ ba liên tiếp.",
        "Lễ hội pháo hoa quốc tế khai mạc tối qua.",
        "Ngành du lịch đón lượng khách kỷ lục.",
        "Cảnh sát giao thông tăng cường kiểm tra nồng độ cồn.",
    ];
    let segments: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"ordinal": i, "start_s": i as f64 * 4.0, "end_s": i as f64 * 4.0 + 3.5, "text": t}))
        .collect();
    serde_json::from_value(json!({
        "video": {"id": "L03_V007", "fps": 25.0, "duration_s": 30.0, "url": "https://example.org/L03_V007.mp4"},
        "shots": [{"start": 0, "end": 199}, {"start": 200, "end": 499}, {"start": 500, "end": 749}],
        "segments": segments,
    }))
    .unwrap()
}

#[test]
fn remote_ingest_matches_builtin() {
    let server = Arc::new(Server { flaky: 1, ..Server::default() });
    let base = start(server.clone());
    let remote = remote_providers(&base);
    let local = Providers::builtin(DIM).unwrap();

    let run = |providers: &Providers| {
        let corpus = Corpus::new(CorpusDims::uniform(DIM)).unwrap();
        let report = ingest_video(&manifest(), &IngestConfig::default(), providers, &corpus).unwrap();
        (corpus, report)
    };
    let (rc, rr) = run(&remote);
    let (lc, lr) = run(&local);
    assert!(server.calls.load(Ordering::SeqCst) > 1);
    assert_eq!((rr.n_keyframes, rr.n_intervals), (lr.n_keyframes, lr.n_intervals));
    assert!(rr.summary_generated);
    // only the remote transformer reports token usage
    assert!(rr.warnings.iter().any(|w| w.contains("tokens")), "{:?}", rr.warnings);
    assert_eq!(rc.video("L03_V007").unwrap().entry(), lc.video("L03_V007").unwrap().entry());

    let engine = |c, p| QueryEngine::new(c, p, QueryConfig::default()).unwrap();
    let (re, le) = (engine(&rc, &remote), engine(&lc, &local));
    let q = "luật đất đai";
    let (a, b) = (re.transcript_search(q, None).unwrap(), le.transcript_search(q, None).unwrap());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.interval.interval_id, y.interval.interval_id);
        assert!((x.score - y.score).abs() < 1e-6);
    }
    let f = re.frame_search("L03_V007/kf_000350").unwrap();
    assert_eq!(f[0].hits[0].keyframe.frame_index, 350);
}

#[test]
fn persistent_server_errors_surface_as_unavailable() {
    let base = start(Arc::new(Server { flaky: usize::MAX, ..Server::default() }));
    let e = RemoteEmbedder::new(client(format!("{base}/embed"), Some(KEY)), DIM);
    let err = e.embed_text("tin nhanh").unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(ref m) if m.contains("3 attempts")), "{err}");
}

#[test]
fn rejected_credentials_are_not_retried() {
    let server = Arc::new(Server::default());
    let base = start(server.clone());
    let t = RemoteTransformer::new(client(format!("{base}/transform"), Some("wrong")));
    let err = t.transform(TransformKind::Clean, "xin chào").unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(ref m) if m.contains("401")), "{err}");
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn dimension_mismatch_is_reported() {
    let base = start(Arc::new(Server::default()));
    let e = RemoteEmbedder::new(client(format!("{base}/embed"), Some(KEY)), DIM * 2);
    let err = e.embed_image("L01_V001/kf_000001").unwrap_err();
    assert!(err.to_string().contains("does not match"), "{err}");
}
