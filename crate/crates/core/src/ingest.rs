//! Per-video data preparation: keyframe sampling, transcript grouping,
//! cleaning, summarization, embedding and indexing.
//!
//! Shot boundaries and ASR segments arrive precomputed in a manifest; no
//! video or audio is decoded here.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoEntry};
use crate::domain::{
    KeyframeRecord, Shot, TranscriptInterval, TranscriptSegment, VideoMeta, VideoSummary,
    time_from_frame_index,
};
use crate::error::{Error, Result};
use crate::providers::{Providers, TextTransformer, TransformKind};
use crate::vectorstore::{KEYFRAMES, Metadata, NewRecord, SUMMARIES, TRANSCRIPTS};

pub const DEFAULT_POSITIONS: [f64; 3] = [0.15, 0.50, 0.85];
pub const DEFAULT_GROUP_SIZE: usize = 5;
/// Characters kept when summarization falls back to truncation.
pub const SUMMARY_FALLBACK_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub keyframe_positions: Vec<f64>,
    pub group_size_k: usize,
    pub clean_enabled: bool,
    pub summarize_enabled: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            keyframe_positions: DEFAULT_POSITIONS.to_vec(),
            group_size_k: DEFAULT_GROUP_SIZE,
            clean_enabled: true,
            summarize_enabled: true,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size_k == 0 {
            return Err(Error::invalid("group_size_k must be at least 1"));
        }
        if self.keyframe_positions.is_empty() {
            return Err(Error::invalid("at least one keyframe position is required"));
        }
        if self.keyframe_positions.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::invalid("keyframe positions must lie in (0, 1)"));
        }
        if self.keyframe_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("keyframe positions must be strictly increasing"));
        }
        Ok(())
    }
}

/// Manifest document as stored on disk, one per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    video: ManifestVideo,
    shots: Vec<ManifestShot>,
    segments: Vec<ManifestSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestVideo {
    id: String,
    fps: f64,
    duration_s: f64,
    url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestShot {
    start: u64,
    end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSegment {
    ordinal: u32,
    start_s: f64,
    end_s: f64,
    text: String,
}

/// Precomputed inputs for one video. Shot bounds are inclusive.
///
/// Serializes to and from the manifest file format:
///
/// ```json
/// {"video": {"id": "L01_V003", "fps": 25.0, "duration_s": 612.4, "url": "https://..", "title": ".."},
///  "shots": [{"start": 0, "end": 99}],
///  "segments": [{"ordinal": 0, "start_s": 0.0, "end_s": 3.9, "text": ".."}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifestFile", into = "ManifestFile")]
pub struct VideoManifest {
    pub meta: VideoMeta,
    pub shots: Vec<Shot>,
    pub segments: Vec<TranscriptSegment>,
}

impl TryFrom<ManifestFile> for VideoManifest {
    type Error = Error;

    fn try_from(f: ManifestFile) -> Result<Self> {
        let shots = f
            .shots
            .iter()
            .map(|s| Shot::new(s.start, s.end))
            .collect::<Result<_>>()?;
        Ok(VideoManifest {
            meta: VideoMeta {
                video_id: f.video.id,
                fps: f.video.fps,
                duration_s: f.video.duration_s,
                source_url: f.video.url,
                title: f.video.title,
            },
            shots,
            segments: f
                .segments
                .into_iter()
                .map(|s| TranscriptSegment {
                    ordinal: s.ordinal,
                    start_s: s.start_s,
                    end_s: s.end_s,
                    raw_text: s.text,
                })
                .collect(),
        })
    }
}

impl From<VideoManifest> for ManifestFile {
    fn from(m: VideoManifest) -> Self {
        ManifestFile {
            video: ManifestVideo {
                id: m.meta.video_id,
                fps: m.meta.fps,
                duration_s: m.meta.duration_s,
                url: m.meta.source_url,
                title: m.meta.title,
            },
            shots: m
                .shots
                .iter()
                .map(|s| ManifestShot {
                    start: s.start_frame,
                    end: s.end_frame,
                })
                .collect(),
            segments: m
                .segments
                .into_iter()
                .map(|s| ManifestSegment {
                    ordinal: s.ordinal,
                    start_s: s.start_s,
                    end_s: s.end_s,
                    text: s.raw_text,
                })
                .collect(),
        }
    }
}

impl VideoManifest {
    pub fn validate(&self) -> Result<()> {
        let id = &self.meta.video_id;
        self.meta.validate()?;
        let frame_limit = self.meta.duration_s * self.meta.fps + 1.0;
        let mut prev_end: Option<u64> = None;
        for (i, shot) in self.shots.iter().enumerate() {
            if shot.start_frame > shot.end_frame {
                return Err(Error::invalid(format!("{id}: shot {i} starts after it ends")));
            }
            if prev_end.is_some_and(|p| shot.start_frame <= p) {
                return Err(Error::invalid(format!(
                    "{id}: shot {i} overlaps or precedes the previous shot"
                )));
            }
            if shot.end_frame as f64 >= frame_limit {
                return Err(Error::invalid(format!(
                    "{id}: shot {i} ends at frame {} beyond the video's {} s",
                    shot.end_frame, self.meta.duration_s
                )));
            }
            prev_end = Some(shot.end_frame);
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.ordinal as usize != i {
                return Err(Error::invalid(format!(
                    "{id}: segment ordinals must run 0,1,2,..; found {} at position {i}",
                    seg.ordinal
                )));
            }
            if !(seg.start_s.is_finite() && seg.end_s.is_finite() && 0.0 <= seg.start_s && seg.start_s <= seg.end_s)
            {
                return Err(Error::invalid(format!("{id}: segment {i} has a bad time span")));
            }
        }
        Ok(())
    }
}

/// Reads manifests from a directory of `*.json` files (in file-name order),
/// a JSON-Lines file, or a single JSON file.
pub fn load_manifests(path: &Path) -> Result<Vec<VideoManifest>> {
    let parse = |text: &str, origin: &str| {
        serde_json::from_str::<VideoManifest>(text)
            .map_err(|e| Error::invalid(format!("{origin}: {e}")))
    };
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        return files
            .iter()
            .map(|p| parse(&fs::read_to_string(p)?, &p.display().to_string()))
            .collect();
    }
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|x| x == "jsonl") {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| parse(l, &format!("{}:{}", path.display(), n + 1)))
            .collect()
    } else {
        Ok(vec![parse(&text, &path.display().to_string())?])
    }
}

fn round_half_up(x: f64) -> u64 {
    let floor = x.floor();
    // Products like 0.15 × 10 can land a hair under .5 in binary.
    if x - floor >= 0.5 - 1e-12 * x.max(1.0) {
        floor as u64 + 1
    } else {
        floor as u64
    }
}

/// Frame indices at normalized `positions` within an inclusive shot:
/// `start + round_half_up(p × (end − start))`.
pub fn select_keyframes(shot: &Shot, positions: &[f64]) -> Vec<u64> {
    let span = shot.end_frame - shot.start_frame;
    positions
        .iter()
        .map(|&p| shot.start_frame + round_half_up(p * span as f64).min(span))
        .collect()
}

/// Partitions ordered segments into consecutive runs of `k`; the last run
/// holds the remainder.
pub fn group_segments(video_id: &str, segments: &[TranscriptSegment], k: usize) -> Result<Vec<TranscriptInterval>> {
    if k == 0 {
        return Err(Error::invalid("group size k must be at least 1"));
    }
    Ok(segments
        .chunks(k)
        .enumerate()
        .map(|(i, run)| {
            let raw_text = run
                .iter()
                .map(|s| s.raw_text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            TranscriptInterval {
                interval_id: format!("{video_id}/tr_{i:04}"),
                video_id: video_id.to_owned(),
                segment_ordinals: run.iter().map(|s| s.ordinal).collect(),
                start_s: run.iter().map(|s| s.start_s).fold(f64::INFINITY, f64::min),
                end_s: run.iter().map(|s| s.end_s).fold(f64::NEG_INFINITY, f64::max),
                cleaned_text: raw_text.clone(),
                raw_text,
            }
        })
        .collect())
}

/// Warnings and provider token usage gathered while preparing one video.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageLog {
    pub warnings: Vec<String>,
    pub clean_tokens: Option<u64>,
    pub summarize_tokens: Option<u64>,
}

fn add_tokens(slot: &mut Option<u64>, tokens: Option<u64>) {
    if let Some(t) = tokens {
        *slot = Some(slot.unwrap_or(0) + t);
    }
}

/// Runs the clean stage on one interval. Provider failures keep the raw text
/// and record a warning.
pub fn clean_interval(interval: &TranscriptInterval, transformer: &dyn TextTransformer, log: &mut StageLog) -> TranscriptInterval {
    let mut out = interval.clone();
    if interval.raw_text.trim().is_empty() {
        out.cleaned_text = String::new();
        return out;
    }
    match transformer.transform(TransformKind::Clean, &interval.raw_text) {
        Ok(t) if !t.text.trim().is_empty() => {
            add_tokens(&mut log.clean_tokens, t.tokens);
            out.cleaned_text = t.text;
        }
        Ok(_) => {
            log.warnings.push(format!(
                "{}: cleaner returned empty text; kept raw text",
                interval.interval_id
            ));
            out.cleaned_text = interval.raw_text.clone();
        }
        Err(e) => {
            log.warnings.push(format!("{}: cleaning failed ({e}); kept raw text", interval.interval_id));
            out.cleaned_text = interval.raw_text.clone();
        }
    }
    out
}

/// Summarizes a video from its cleaned intervals, in order. Provider
/// failures fall back to the first 512 characters of the transcript.
pub fn summarize_video(
    video_id: &str,
    intervals: &[TranscriptInterval],
    transformer: &dyn TextTransformer,
    log: &mut StageLog,
) -> Result<VideoSummary> {
    let transcript = intervals
        .iter()
        .map(|t| t.cleaned_text.as_str())
        .filter(|t| !t.trim().is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    if transcript.is_empty() {
        return Err(Error::NoSummary(format!("{video_id} has no transcript text")));
    }
    let summary_text = match transformer.transform(TransformKind::Summarize, &transcript) {
        Ok(t) if !t.text.trim().is_empty() => {
            add_tokens(&mut log.summarize_tokens, t.tokens);
            t.text
        }
        outcome => {
            let why = match outcome {
                Err(e) => e.to_string(),
                Ok(_) => "empty summary".to_owned(),
            };
            log.warnings.push(format!(
                "{video_id}: summarization failed ({why}); using the first {SUMMARY_FALLBACK_CHARS} characters"
            ));
            transcript.chars().take(SUMMARY_FALLBACK_CHARS).collect()
        }
    };
    Ok(VideoSummary {
        video_id: video_id.to_owned(),
        summary_text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub video_id: String,
    pub n_shots: usize,
    pub n_keyframes: usize,
    pub n_intervals: usize,
    pub summary_generated: bool,
    pub warnings: Vec<String>,
}

fn keyframe_records(manifest: &VideoManifest, positions: &[f64]) -> Result<Vec<KeyframeRecord>> {
    let meta = &manifest.meta;
    let mut out = Vec::with_capacity(manifest.shots.len() * positions.len());
    for (ordinal, shot) in manifest.shots.iter().enumerate() {
        let frames = select_keyframes(shot, positions);
        for (i, (&frame, &position)) in frames.iter().zip(positions).enumerate() {
            let image_ref = format!("{}/kf_{frame:06}", meta.video_id);
            // Short shots can map several positions to one frame.
            let repeats = frames[..i].iter().filter(|&&f| f == frame).count();
            let keyframe_id = if repeats == 0 {
                image_ref.clone()
            } else {
                format!("{image_ref}~{repeats}")
            };
            out.push(KeyframeRecord {
                keyframe_id,
                video_id: meta.video_id.clone(),
                shot_ordinal: ordinal as u32,
                frame_index: frame,
                position,
                timestamp_s: time_from_frame_index(frame, meta.fps)?,
                image_ref,
            });
        }
    }
    Ok(out)
}

fn metadata(video_id: &str, extra: &[(&str, String)]) -> Metadata {
    let mut m = Metadata::from([("video_id".to_owned(), video_id.to_owned())]);
    for (k, v) in extra {
        m.insert((*k).to_owned(), v.clone());
    }
    m
}

/// Prepares, embeds and indexes one video. Nothing is written unless every
/// embedding succeeds.
pub fn ingest_video(
    manifest: &VideoManifest,
    config: &IngestConfig,
    providers: &Providers,
    corpus: &Corpus,
) -> Result<IngestReport> {
    config.validate()?;
    manifest.validate()?;
    let video_id = manifest.meta.video_id.as_str();
    let _reservation = corpus.reserve(video_id)?;
    let mut log = StageLog::default();

    let keyframes = keyframe_records(manifest, &config.keyframe_positions)?;

    let mut intervals = Vec::new();
    for interval in group_segments(video_id, &manifest.segments, config.group_size_k)? {
        let interval = if config.clean_enabled {
            clean_interval(&interval, providers.transform.as_ref(), &mut log)
        } else {
            interval
        };
        if interval.cleaned_text.trim().is_empty() {
            log.warnings.push(format!("{}: no transcript text; not indexed", interval.interval_id));
            continue;
        }
        intervals.push(interval);
    }

    let summary = if !config.summarize_enabled {
        None
    } else {
        match summarize_video(video_id, &intervals, providers.transform.as_ref(), &mut log) {
            Ok(s) => Some(s),
            Err(Error::NoSummary(msg)) => {
                log.warnings.push(format!("summary not generated: {msg}"));
                None
            }
            Err(e) => return Err(e),
        }
    };

    let refs: Vec<String> = keyframes.iter().map(|k| k.image_ref.clone()).collect();
    let kf_vectors = providers.image.embed_images(&refs)?;
    let texts: Vec<String> = intervals.iter().map(|t| t.cleaned_text.clone()).collect();
    let tr_vectors = providers.text.embed_texts(&texts)?;
    let su_vectors = match &summary {
        Some(s) => providers.text.embed_texts(std::slice::from_ref(&s.summary_text))?,
        None => Vec::new(),
    };
    if kf_vectors.len() != keyframes.len() || tr_vectors.len() != intervals.len() {
        return Err(Error::ProviderUnavailable("provider returned the wrong number of vectors".into()));
    }

    let mut records: BTreeMap<String, Vec<NewRecord>> = BTreeMap::new();
    records.insert(
        KEYFRAMES.to_owned(),
        keyframes
            .iter()
            .zip(kf_vectors)
            .map(|(k, vector)| NewRecord {
                id: k.keyframe_id.clone(),
                vector,
                metadata: metadata(
                    video_id,
                    &[
                        ("frame_index", k.frame_index.to_string()),
                        ("shot_ordinal", k.shot_ordinal.to_string()),
                        ("timestamp_s", k.timestamp_s.to_string()),
                    ],
                ),
            })
            .collect(),
    );
    records.insert(
        TRANSCRIPTS.to_owned(),
        intervals
            .iter()
            .zip(tr_vectors)
            .map(|(t, vector)| NewRecord {
                id: t.interval_id.clone(),
                vector,
                metadata: metadata(
                    video_id,
                    &[("start_s", t.start_s.to_string()), ("end_s", t.end_s.to_string())],
                ),
            })
            .collect(),
    );
    records.insert(
        SUMMARIES.to_owned(),
        su_vectors
            .into_iter()
            .map(|vector| NewRecord {
                id: format!("{video_id}/summary"),
                vector,
                metadata: metadata(video_id, &[]),
            })
            .collect(),
    );

    if let Some(t) = log.clean_tokens {
        log.warnings.push(format!("clean stage used {t} provider tokens"));
    }
    if let Some(t) = log.summarize_tokens {
        log.warnings.push(format!("summarize stage used {t} provider tokens"));
    }

    let report = IngestReport {
        video_id: video_id.to_owned(),
        n_shots: manifest.shots.len(),
        n_keyframes: keyframes.len(),
        n_intervals: intervals.len(),
        summary_generated: summary.is_some(),
        warnings: log.warnings,
    };
    corpus.commit(
        VideoEntry {
            meta: manifest.meta.clone(),
            keyframes,
            intervals,
            summary,
        },
        records,
    )?;
    Ok(report)
}
