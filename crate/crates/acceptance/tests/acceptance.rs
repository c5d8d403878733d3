//! One PASS/FAIL line per acceptance criterion. Every check compares the
//! engine against an oracle written independently here.

use std::collections::BTreeMap;
use std::net::TcpListener as StdListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use mervin_core::corpus::{Corpus, CorpusDims, VideoEntry};
use mervin_core::domain::{Embedding, KeyframeRecord, Shot, TranscriptSegment, VideoMeta};
use mervin_core::eval::{EvalConfig, EvalTask, ResultItem, TaskKind, final_score};
use mervin_core::ingest::{IngestConfig, group_segments, ingest_video, select_keyframes};
use mervin_core::providers::ProviderConfig;
use mervin_core::query::{FrameHit, QueryConfig, QueryEngine, score_temporal_video};
use mervin_core::vectorstore::{Collection, KEYFRAMES, Metadata, NewRecord};
use mervin_core::{Error, Providers};
use mervin_service::{AppState, ServiceConfig, serve, serve_state};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Value, json};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("vector search exactness", vector_exactness),
        ("temporal score formula", temporal_formula),
        ("temporal pruning", temporal_pruning),
        ("evaluation metric", evaluation_metric),
        ("ingest arithmetic", ingest_arithmetic),
        ("end-to-end planted retrieval", planted_retrieval),
        ("persistence round trip", persistence),
        ("service contract", service_contract),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s]: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::normalize((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Dot product summed back to front, in f64.
fn oracle_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).rev().map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn md(video: &str) -> Metadata {
    Metadata::from([("video_id".to_owned(), video.to_owned())])
}

// ---------------------------------------------------------------------------

fn vector_exactness() -> Check {
    const DIM: usize = 256;
    const N: usize = 10_000;
    let started = Instant::now();
    let mut searches = 0;
    for seed in [11u64, 22, 33, 44, 55] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut col = Collection::new("bench", DIM).unwrap();
        let mut stored = Vec::with_capacity(N);
        for i in 0..N {
            let v = random_unit(&mut rng, DIM);
            let id = format!("r{i:05}");
            stored.push((id.clone(), v.values().to_vec()));
            col.insert(NewRecord {
                id,
                vector: v,
                metadata: md(&format!("v{}", i % 50)),
            })
            .unwrap();
        }
        let mut queries: Vec<Embedding> = (0..8).map(|_| random_unit(&mut rng, DIM)).collect();
        for j in [17usize, 9_999] {
            queries.push(Embedding::from_unit(stored[j].1.clone()).unwrap());
        }
        for q in &queries {
            let mut oracle: Vec<(f64, &str)> = stored.iter().map(|(id, v)| (oracle_dot(q.values(), v), id.as_str())).collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
            for k in [1usize, 10, 100] {
                let got = col.search(q, k, None).unwrap();
                searches += 1;
                ensure!(got.len() == k, "seed {seed}: {} hits for k={k}", got.len());
                for (rank, (hit, (score, id))) in got.iter().zip(&oracle).enumerate() {
                    ensure!(hit.id == *id, "seed {seed} k={k} rank {rank}: got {} want {id}", hit.id);
                    ensure!((hit.score - score).abs() <= 1e-6, "seed {seed} k={k} rank {rank}: score {} vs {score}", hit.score);
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s, limit 60s");
    Ok(format!("5 corpora x {N} x dim {DIM}, {searches} searches identical to brute force in {secs:.1}s"))
}

// ---------------------------------------------------------------------------

fn frame_hit(video: &str, id: &str, t: f64, score: f64) -> FrameHit {
    FrameHit {
        keyframe: KeyframeRecord {
            keyframe_id: id.to_owned(),
            video_id: video.to_owned(),
            shot_ordinal: 0,
            frame_index: (t * 25.0) as u64,
            position: 0.5,
            timestamp_s: t,
            image_ref: id.to_owned(),
        },
        score,
    }
}

fn oracle_mean_top(scores: &[f64], m: usize) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s.truncate(m);
    s.iter().sum::<f64>() / s.len() as f64
}

/// (video, s_video, s_pair, t1, t2) for one video's hits, or None.
fn oracle_video(hits1: &[(f64, f64)], hits2: &[(f64, f64)], max_gap: f64) -> Option<(f64, f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for &(t1, s1) in hits1 {
        for &(t2, s2) in hits2 {
            if !(t2 > t1) || t2 - t1 > max_gap {
                continue;
            }
            let p = (s1 + s2) / 2.0;
            if best.is_none_or(|(bp, bt1, bt2)| p > bp || (p == bp && (t1 < bt1 || (t1 == bt1 && t2 < bt2)))) {
                best = Some((p, t1, t2));
            }
        }
    }
    let (s_pair, t1, t2) = best?;
    let a1 = oracle_mean_top(&hits1.iter().map(|h| h.1).collect::<Vec<_>>(), 10);
    let a2 = oracle_mean_top(&hits2.iter().map(|h| h.1).collect::<Vec<_>>(), 10);
    Some((10.0 * s_pair + 5.0 * (a1 + a2), s_pair, t1, t2))
}

fn temporal_formula() -> Check {
    let config = QueryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut scored, mut dropped) = (0, 0);
    while scored < 1000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
            (0..rng.random_range(1..=25))
                .map(|_| ((rng.random_range(0..90_000) as f64) / 100.0, rng.random_range(-1.0..1.0)))
                .collect()
        };
        let (raw1, raw2) = (draw(&mut rng), draw(&mut rng));
        let h1: Vec<_> = raw1.iter().enumerate().map(|(i, &(t, s))| frame_hit("v", &format!("a{i:02}"), t, s)).collect();
        let h2: Vec<_> = raw2.iter().enumerate().map(|(i, &(t, s))| frame_hit("v", &format!("b{i:02}"), t, s)).collect();
        let got = score_temporal_video("v", &h1, &h2, &config);
        match (got, oracle_video(&raw1, &raw2, 300.0)) {
            (Ok(s), Some((s_video, s_pair, t1, t2))) => {
                let identity = s.s_video - (10.0 * s.s_pair + 5.0 * (s.avg_top1 + s.avg_top2));
                ensure!(identity.abs() <= 1e-9, "config {scored}: identity off by {identity}");
                ensure!((s.s_video - s_video).abs() <= 1e-9, "config {scored}: s_video {} vs oracle {s_video}", s.s_video);
                ensure!(s.s_pair == s_pair && s.best_pair.t1_s == t1 && s.best_pair.t2_s == t2, "config {scored}: best pair differs");
                scored += 1;
            }
            (Err(Error::NoPair(_)), None) => dropped += 1,
            (got, want) => return Err(format!("config {scored}: engine {got:?} vs oracle {want:?}")),
        }
    }

    // Whole temporal search against brute-force pair enumeration.
    let providers = Providers::builtin(32).unwrap();
    let mut videos_checked = 0;
    for trial in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial);
        let corpus = Corpus::new(CorpusDims::uniform(32)).unwrap();
        let mut all = Vec::new();
        for v in 0..rng.random_range(1..=20) {
            let video = format!("v{v:02}");
            let frames: Vec<(f64, Embedding)> = (0..rng.random_range(1..=30))
                .map(|_| ((rng.random_range(0..60_000) as f64) / 50.0, random_unit(&mut rng, 32)))
                .collect();
            for (i, (t, e)) in frames.iter().enumerate() {
                all.push((video.clone(), format!("{video}/kf_{i:06}"), *t, e.values().to_vec()));
            }
            commit_frames(&corpus, &video, frames);
        }
        let frame_k = [20, 80, 1000][trial as usize % 3];
        let config = QueryConfig { frame_k, ..QueryConfig::default() };
        let (q1, q2) = (random_unit(&mut rng, 32), random_unit(&mut rng, 32));
        let got = QueryEngine::new(&corpus, &providers, config.clone()).unwrap().temporal_search_by_vector(&q1, &q2).unwrap();

        let top = |q: &Embedding| {
            let mut scored: Vec<(f64, &str, &str, f64)> =
                all.iter().map(|(v, id, t, e)| (oracle_dot(q.values(), e), id.as_str(), v.as_str(), *t)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
            scored.truncate(frame_k);
            let mut per: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
            for (s, _, v, t) in scored {
                per.entry(v).or_default().push((t, s));
            }
            per
        };
        let (p1, p2) = (top(&q1), top(&q2));
        let mut want: Vec<(String, f64, f64, f64)> = p1
            .iter()
            .filter_map(|(v, h1)| {
                let (sv, _, t1, t2) = oracle_video(h1, p2.get(v)?, 300.0)?;
                Some((v.to_string(), sv, t1, t2))
            })
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ensure!(got.len() == want.len(), "trial {trial}: {} videos vs oracle {}", got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            ensure!(g.video_id == w.0, "trial {trial}: order differs at {} vs {}", g.video_id, w.0);
            ensure!((g.s_video - w.1).abs() <= 1e-9, "trial {trial}: s_video {} vs {}", g.s_video, w.1);
            ensure!((g.best_pair.t1_s, g.best_pair.t2_s) == (w.2, w.3), "trial {trial}: best pair differs for {}", g.video_id);
        }
        videos_checked += want.len();
    }
    Ok(format!(
        "1000 scored configurations ({dropped} pairless ones correctly dropped) within 1e-9; 25 corpora ({videos_checked} ranked videos) equal to brute force"
    ))
}

fn commit_frames(corpus: &Corpus, video: &str, frames: Vec<(f64, Embedding)>) {
    let keyframes: Vec<KeyframeRecord> = frames
        .iter()
        .enumerate()
        .map(|(i, (t, _))| frame_hit(video, &format!("{video}/kf_{i:06}"), *t, 0.0).keyframe)
        .collect();
    let records = keyframes
        .iter()
        .zip(frames)
        .map(|(k, (_, vector))| NewRecord {
            id: k.keyframe_id.clone(),
            vector,
            metadata: md(video),
        })
        .collect();
    let entry = VideoEntry {
        meta: VideoMeta {
            video_id: video.to_owned(),
            fps: 25.0,
            duration_s: 7200.0,
            source_url: String::new(),
            title: None,
        },
        keyframes,
        intervals: Vec::new(),
        summary: None,
    };
    corpus.commit(entry, BTreeMap::from([(KEYFRAMES.to_owned(), records)])).unwrap();
}

// ---------------------------------------------------------------------------

fn temporal_pruning() -> Check {
    let config = QueryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let gaps = [299.999, 300.0, 300.001, 0.0, -0.001, -50.0];
    let mut returned = 0;
    for case in 0..10_000 {
        let t1s: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..100_000) as f64 / 100.0).collect();
        let t2s: Vec<f64> = (0..rng.random_range(1..6))
            .map(|_| {
                let base = t1s[rng.random_range(0..t1s.len())];
                if rng.random_bool(0.7) {
                    base + gaps[rng.random_range(0..gaps.len())]
                } else {
                    rng.random_range(0..100_000) as f64 / 100.0
                }
            })
            .collect();
        let h1: Vec<_> = t1s.iter().enumerate().map(|(i, &t)| frame_hit("v", &format!("a{i}"), t, rng.random_range(-1.0..1.0))).collect();
        let h2: Vec<_> = t2s.iter().enumerate().map(|(i, &t)| frame_hit("v", &format!("b{i}"), t, rng.random_range(-1.0..1.0))).collect();
        let any_valid = t1s.iter().any(|&a| t2s.iter().any(|&b| b > a && b - a <= 300.0));
        match score_temporal_video("v", &h1, &h2, &config) {
            Ok(s) => {
                let (t1, t2) = (s.best_pair.t1_s, s.best_pair.t2_s);
                ensure!(t1 < t2 && t2 - t1 <= 300.0, "case {case}: returned pair ({t1}, {t2})");
                returned += 1;
            }
            Err(_) => ensure!(!any_valid, "case {case}: a valid pair exists but the video was dropped"),
        }
    }

    // Boundary gaps through the full search path.
    let corpus = Corpus::new(CorpusDims::uniform(32)).unwrap();
    let providers = Providers::builtin(32).unwrap();
    let (q1, q2) = (random_unit(&mut rng, 32), random_unit(&mut rng, 32));
    for (video, t2) in [("gap_299.999", 399.999), ("gap_300.000", 400.0), ("gap_300.001", 400.001)] {
        commit_frames(&corpus, video, vec![(100.0, q1.clone()), (t2, q2.clone())]);
    }
    let out = QueryEngine::new(&corpus, &providers, config).unwrap().temporal_search_by_vector(&q1, &q2).unwrap();
    let mut kept: Vec<&str> = out.iter().map(|s| s.video_id.as_str()).collect();
    kept.sort();
    ensure!(kept == ["gap_299.999", "gap_300.000"], "kept {kept:?}");
    for s in &out {
        ensure!(s.best_pair.t1_s < s.best_pair.t2_s && s.best_pair.t2_s - s.best_pair.t1_s <= 300.0, "{} violates", s.video_id);
    }
    Ok(format!("10000 randomized configurations ({returned} with pairs) sound; gaps 299.999 and 300.0 kept, 300.001 pruned"))
}

// ---------------------------------------------------------------------------

fn evaluation_metric() -> Check {
    let task = EvalTask {
        query_id: "q".into(),
        kind: TaskKind::Kis,
        video: "L01_V001".into(),
        frame: Some(1234),
        answer: None,
        segment: None,
        frame_tolerance: 0,
    };
    let list = |correct: Option<u32>, n: u32| -> Vec<ResultItem> {
        (1..=n)
            .map(|rank| ResultItem {
                rank,
                video_id: if Some(rank) == correct { "L01_V001".into() } else { format!("L02_V{rank:03}") },
                frame_index: 1234,
                answer: None,
                segment: None,
            })
            .collect()
    };
    let ks = [1usize, 5, 20, 50, 100];
    let mut lines = Vec::new();
    for (rank, expected) in [(Some(1), 1.0), (Some(3), 0.8), (Some(6), 0.6), (Some(21), 0.4), (Some(51), 0.2), (Some(101), 0.0), (None, 0.0)] {
        // hand formula: (1/|ks|) * #{k : first correct rank <= k}
        let hand = ks.iter().filter(|&&k| rank.is_some_and(|r| r as usize <= k)).count() as f64 / ks.len() as f64;
        ensure!(hand == expected, "hand formula disagrees with the table at {rank:?}");
        let got = final_score(&list(rank, 110), &task, &EvalConfig::default()).map_err(|e| e.to_string())?;
        ensure!(got == expected, "rank {rank:?}: got {got}, want {expected}");
        lines.push(format!("{}->{got}", rank.map_or("absent".into(), |r| r.to_string())));
    }
    let empty = final_score(&[], &task, &EvalConfig::default()).map_err(|e| e.to_string())?;
    ensure!(empty == 0.0, "empty list scored {empty}");
    Ok(format!("exact: {}", lines.join(", ")))
}

// ---------------------------------------------------------------------------

fn ingest_arithmetic() -> Check {
    let p = [0.15, 0.50, 0.85];
    let ex = |s, e| select_keyframes(&Shot::new(s, e).unwrap(), &p);
    ensure!(ex(0, 99) == [15, 50, 84], "[0,99] gave {:?}", ex(0, 99));
    ensure!(ex(7, 7) == [7, 7, 7], "[7,7] gave {:?}", ex(7, 7));
    ensure!(ex(100, 101) == [100, 101, 101], "[100,101] gave {:?}", ex(100, 101));
    let seg = |n: u32| -> Vec<TranscriptSegment> {
        (0..n)
            .map(|i| TranscriptSegment {
                ordinal: i,
                start_s: i as f64,
                end_s: i as f64 + 0.9,
                raw_text: format!("câu {i}"),
            })
            .collect()
    };
    let sizes = |n, k| -> Vec<usize> { group_segments("v", &seg(n), k).unwrap().iter().map(|t| t.segment_ordinals.len()).collect() };
    ensure!(sizes(12, 5) == [5, 5, 2], "12 segments gave {:?}", sizes(12, 5));
    ensure!(sizes(5, 5) == [5], "5 segments gave {:?}", sizes(5, 5));
    ensure!(sizes(0, 5).is_empty(), "0 segments gave intervals");

    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    for case in 0..10_000 {
        let start = rng.random_range(0..1_000_000u64);
        let len = rng.random_range(0..100_000u64);
        let got = ex(start, start + len);
        // round_half_up(p/100 * len) in integers: floor((2 p len + 100) / 200)
        let want: Vec<u64> = [15u64, 50, 85].iter().map(|&h| start + (2 * h * len + 100) / 200).collect();
        ensure!(got == want, "case {case}: shot [{start}, {}] gave {got:?}, want {want:?}", start + len);
        ensure!(got.iter().all(|&f| start <= f && f <= start + len), "case {case}: outside shot");
        ensure!(got.windows(2).all(|w| w[0] <= w[1]), "case {case}: not ordered");
    }
    for case in 0..10_000 {
        let n = rng.random_range(0..80u32);
        let k = rng.random_range(1..12usize);
        let segs = seg(n);
        let groups = group_segments("v", &segs, k).unwrap();
        ensure!(groups.len() == (n as usize).div_ceil(k), "case {case}: {} groups for n={n} k={k}", groups.len());
        let flat: Vec<u32> = groups.iter().flat_map(|g| g.segment_ordinals.clone()).collect();
        ensure!(flat == (0..n).collect::<Vec<_>>(), "case {case}: not a partition");
        for (i, g) in groups.iter().enumerate() {
            let last = i + 1 == groups.len();
            ensure!(last || g.segment_ordinals.len() == k, "case {case}: inner group of size {}", g.segment_ordinals.len());
            let first = &segs[g.segment_ordinals[0] as usize];
            let end = &segs[*g.segment_ordinals.last().unwrap() as usize];
            ensure!(g.start_s == first.start_s && g.end_s == end.end_s, "case {case}: span mismatch");
        }
    }

    // 4 shots, 12 segments through ingest
    let providers = Providers::builtin(64).unwrap();
    let corpus = Corpus::new(CorpusDims::uniform(64)).unwrap();
    let mut m = mervin_testkit::manifest("L01_V001", 1);
    m.shots.truncate(4);
    m.segments.truncate(12);
    let r = ingest_video(&m, &IngestConfig::default(), &providers, &corpus).map_err(|e| e.to_string())?;
    let c = corpus.counts();
    ensure!((r.n_keyframes, r.n_intervals, c.keyframes, c.transcripts) == (12, 3, 12, 3), "4x12 ingest gave {r:?} / {c:?}");
    Ok("documented examples exact; 10000 random shots and 10000 segment lists match integer oracles".into())
}

// ---------------------------------------------------------------------------

fn planted_retrieval() -> Check {
    let providers = Providers::builtin(256).unwrap();
    let corpus = Corpus::new(CorpusDims::from_providers(&providers)).unwrap();
    for m in mervin_testkit::corpus(50, 42) {
        ingest_video(&m, &IngestConfig::default(), &providers, &corpus).map_err(|e| e.to_string())?;
    }
    let engine = QueryEngine::new(&corpus, &providers, QueryConfig::default()).unwrap();
    let ids = corpus.video_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let (mut transcript_ok, mut frame_ok) = (0, 0);
    let mut misses = Vec::new();
    for _ in 0..20 {
        let video = corpus.video(&ids[rng.random_range(0..ids.len())]).unwrap();
        let intervals = &video.entry().intervals;
        let interval = &intervals[rng.random_range(0..intervals.len())];
        let hits = engine.transcript_search(&interval.cleaned_text, None).map_err(|e| e.to_string())?;
        if hits.first().is_some_and(|h| h.interval.video_id == interval.video_id) {
            transcript_ok += 1;
        } else {
            misses.push(interval.interval_id.clone());
        }
    }
    for _ in 0..20 {
        let video = corpus.video(&ids[rng.random_range(0..ids.len())]).unwrap();
        let kfs = &video.entry().keyframes;
        let kf = &kfs[rng.random_range(0..kfs.len())];
        let groups = engine.frame_search(&kf.image_ref).map_err(|e| e.to_string())?;
        let top = groups.first().map(|g| &g.hits[0].keyframe);
        if top.is_some_and(|t| t.video_id == kf.video_id && t.frame_index == kf.frame_index) {
            frame_ok += 1;
        } else {
            misses.push(kf.keyframe_id.clone());
        }
    }
    ensure!(transcript_ok >= 19 && frame_ok == 20, "transcripts {transcript_ok}/20, frames {frame_ok}/20, misses {misses:?}");
    Ok(format!("50 videos: transcript rank-1 {transcript_ok}/20, frame rank-1 {frame_ok}/20"))
}

// ---------------------------------------------------------------------------

fn service_config(store: &Path) -> ServiceConfig {
    ServiceConfig {
        bind_address: "127.0.0.1:0".into(),
        store_path: store.to_owned(),
        ..ServiceConfig::default()
    }
}

struct Http {
    client: reqwest::Client,
    base: String,
}

impl Http {
    fn new(addr: std::net::SocketAddr) -> Self {
        Http {
            client: reqwest::Client::new(),
            base: format!("http://{addr}"),
        }
    }

    async fn raw(&self, method: &str, path: &str, body: Option<String>) -> (u16, Vec<u8>) {
        let url = format!("{}{path}", self.base);
        let req = match method {
            "GET" => self.client.get(url),
            _ => self.client.post(url).header("content-type", "application/json").body(body.unwrap_or_default()),
        };
        let r = req.send().await.unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let (s, b) = self.raw("GET", path, None).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let (s, b) = self.raw("POST", path, Some(body.to_string())).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn persistence() -> Check {
    runtime().block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let handle = serve(service_config(dir.path())).await.map_err(|e| e.to_string())?;
        let http = Http::new(handle.local_addr());
        let manifests = mervin_testkit::corpus(12, 8);
        for m in &manifests {
            let (s, _) = http.post("/ingest", &serde_json::to_value(m).unwrap()).await;
            ensure!(s == 200, "ingest returned {s}");
        }
        let queries: Vec<(&str, Value)> = vec![
            ("/search/frames", json!({"query": format!("{}/kf_000100", manifests[3].meta.video_id), "k": 10})),
            ("/search/frames", json!({"query": "bản tin thời sự", "k": 10})),
            ("/search/transcripts", json!({"query": manifests[5].segments[2].raw_text, "k": 10})),
            ("/search/transcripts", json!({"query": "thời tiết Hà Nội", "k": 10})),
            ("/search/summaries", json!({"query": manifests[7].segments[0].raw_text, "k": 10})),
        ];
        let mut before = Vec::new();
        for (path, body) in &queries {
            before.push(http.raw("POST", path, Some(body.to_string())).await);
        }
        let health = http.raw("GET", "/health", None).await;
        let (s, _) = http.post("/snapshot", &json!({})).await;
        ensure!(s == 200, "snapshot returned {s}");
        handle.shutdown().await.map_err(|e| e.to_string())?;

        let handle = serve(service_config(dir.path())).await.map_err(|e| e.to_string())?;
        let http = Http::new(handle.local_addr());
        ensure!(http.raw("GET", "/health", None).await == health, "health differs after restart");
        for (i, (path, body)) in queries.iter().enumerate() {
            let after = http.raw("POST", path, Some(body.to_string())).await;
            ensure!(after == before[i], "query {i} on {path} differs after restart");
        }
        handle.shutdown().await.map_err(|e| e.to_string())?;
        let counts: Value = serde_json::from_slice(&health.1).unwrap();
        Ok(format!(
            "health {{videos: {}, keyframes: {}, transcripts: {}}} and 5 top-10 responses byte-identical after restart",
            counts["videos"], counts["keyframes"], counts["transcripts"]
        ))
    })
}

// ---------------------------------------------------------------------------

fn schema(name: &str) -> jsonschema::Validator {
    let text = match name {
        "error" => include_str!("../../service/schemas/error.json"),
        "health" => include_str!("../../service/schemas/health.json"),
        "ingest_report" => include_str!("../../service/schemas/ingest_report.json"),
        "frame_search" => include_str!("../../service/schemas/frame_search.json"),
        "transcript_search" => include_str!("../../service/schemas/transcript_search.json"),
        "summary_search" => include_str!("../../service/schemas/summary_search.json"),
        "temporal_search" => include_str!("../../service/schemas/temporal_search.json"),
        "video" => include_str!("../../service/schemas/video.json"),
        "keyframes" => include_str!("../../service/schemas/keyframes.json"),
        "verification" => include_str!("../../service/schemas/verification.json"),
        "build" => include_str!("../../service/schemas/build.json"),
        "snapshot" => include_str!("../../service/schemas/snapshot.json"),
        other => panic!("no schema {other}"),
    };
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

fn service_contract() -> Check {
    runtime().block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let handle = serve(service_config(dir.path())).await.map_err(|e| e.to_string())?;
        let http = Http::new(handle.local_addr());
        let manifests = mervin_testkit::corpus(6, 99);
        let m0 = serde_json::to_value(&manifests[0]).unwrap();
        let v1 = manifests[1].meta.video_id.clone();

        let mut checks: Vec<(&str, u16, Value)> = Vec::new();
        let mut record = |schema: &'static str, status: u16, body: Value| checks.push((schema, status, body));
        record("health", 200, http.get("/health").await.1);
        for m in &manifests {
            let (s, b) = http.post("/ingest", &serde_json::to_value(m).unwrap()).await;
            ensure!(s == 200, "ingest returned {s}: {b}");
            record("ingest_report", s, b);
        }
        let (s, b) = http.post("/ingest", &m0).await;
        record("error", s, b.clone());
        ensure!(s == 409 && b["error"] == "conflict", "duplicate ingest gave {s} {b}");
        let (s, b) = http.post("/ingest", &json!({"video": {}})).await;
        ensure!(s == 400, "malformed ingest gave {s}");
        record("error", s, b);

        let (s, kfs) = http.get(&format!("/videos/{v1}/keyframes")).await;
        ensure!(s == 200, "keyframes returned {s}");
        record("keyframes", s, kfs.clone());
        let (s, b) = http.get(&format!("/videos/{v1}")).await;
        record("video", s, b);
        let (s, b) = http.get("/videos/L99_V999").await;
        ensure!(s == 404, "unknown video gave {s}");
        record("error", s, b);

        let kf = &kfs["keyframes"];
        let searches = vec![
            ("/search/frames", "frame_search", json!({"query": kf[3]["image_ref"], "k": 30})),
            ("/search/frames", "frame_search", json!({"query": kf[3]["image_ref"], "allowed_videos": [v1]})),
            ("/search/transcripts", "transcript_search", json!({"query": manifests[2].segments[1].raw_text, "k": 10})),
            ("/search/transcripts", "transcript_search", json!({"query": "bóng đá", "keyword": "bóng"})),
            ("/search/summaries", "summary_search", json!({"query": manifests[4].segments[0].raw_text})),
            ("/search/temporal", "temporal_search", json!({"e1": kf[0]["image_ref"], "e2": kf[6]["image_ref"], "max_gap_s": 900.0})),
        ];
        let mut serial = Vec::new();
        for (path, name, body) in &searches {
            let (s, b) = http.post(path, body).await;
            ensure!(s == 200, "{path} returned {s}: {b}");
            serial.push(b.clone());
            record(name, s, b);
        }
        for bad in ["{", "{\"q\": 1}", "{\"query\": \"\"}"] {
            let (s, b) = http.raw("POST", "/search/frames", Some(bad.into())).await;
            let b: Value = serde_json::from_slice(&b).unwrap_or(Value::Null);
            ensure!(s == 400 && b["error"] == "invalid_query", "malformed search {bad} gave {s} {b}");
            record("error", s, b);
        }

        let (s, b) = http.post("/submission/verify", &json!({"video_id": v1, "frame_index": kf[0]["frame_index"]})).await;
        ensure!(s == 200 && b["passed"] == true, "verify gave {s} {b}");
        record("verification", s, b);
        let (s, b) = http.post("/submission/verify", &json!({"video_id": "L99_V999", "frame_index": 1})).await;
        ensure!(s == 404, "verify unknown video gave {s}");
        record("error", s, b);
        let items = json!([{"rank": 1, "video_id": v1, "frame_index": kf[0]["frame_index"]}]);
        let (s, b) = http.post("/submission/build", &json!({"query_id": "kis-01", "items": items})).await;
        ensure!(s == 200, "build gave {s} {b}");
        record("build", s, b);
        let (s, zip) = http.raw("GET", "/submission/archive", None).await;
        ensure!(s == 200 && zip.starts_with(b"PK"), "archive gave {s}");
        let (s, b) = http.post("/snapshot", &json!({})).await;
        record("snapshot", s, b);

        // 32 requests in flight must reproduce the serial answers
        let http = std::sync::Arc::new(http);
        let mut tasks = Vec::new();
        for i in 0..32 {
            let http = http.clone();
            let (path, _, body) = searches[i % searches.len()].clone();
            tasks.push(tokio::spawn(async move { (i, http.post(path, &body).await) }));
        }
        for t in tasks {
            let (i, (s, b)) = t.await.unwrap();
            ensure!(s == 200 && b == serial[i % searches.len()], "concurrent request {i} differs from serial");
        }
        handle.shutdown().await.map_err(|e| e.to_string())?;

        // 503 when the visual model server is unreachable
        let port = StdListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut remote = ProviderConfig::remote(format!("http://127.0.0.1:{port}/clip"), 256);
        remote.timeout_ms = 200;
        let mut providers = Providers::builtin(256).unwrap();
        providers.image = remote.build_embedder().unwrap();
        let state = AppState::from_parts(Corpus::new(CorpusDims::uniform(256)).unwrap(), providers, service_config(dir.path()));
        let down = serve_state(state, "127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let http = Http::new(down.local_addr());
        let (s, b) = http.post("/search/frames", &json!({"query": "xe cứu thương"})).await;
        ensure!(s == 503 && b["error"] == "provider_unavailable", "unreachable provider gave {s} {b}");
        checks.push(("error", s, b));
        down.shutdown().await.map_err(|e| e.to_string())?;

        let mut statuses = std::collections::BTreeSet::new();
        for (name, status, body) in &checks {
            let errors: Vec<String> = schema(name).iter_errors(body).map(|e| e.to_string()).collect();
            ensure!(errors.is_empty(), "{name} response fails its schema: {errors:?}");
            statuses.insert(*status);
        }
        Ok(format!(
            "{} responses schema-valid over all endpoints, statuses {statuses:?} exercised, 32 concurrent searches equal serial; no console involved",
            checks.len()
        ))
    })
}
