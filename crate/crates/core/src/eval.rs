//! Result-list scoring and submission archives.
//!
//! Each result is judged correct (1) or not (0) against the ground truth of
//! its task. A ranked list scores the mean, over the cutoffs `ks`, of the
//! best judgement in the top-k prefix.
//!
//! A submission archive is a ZIP with one headerless CSV per query, named
//! `<query_id>.csv`, one result per line in rank order:
//!
//! ```text
//! L01_V003,1250             known-item
//! L01_V003,1250,hà nội      question answering
//! L01_V003,1200,1320        temporal alignment (start and end frame)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::domain::{VideoMeta, frame_index_from_time, time_from_frame_index};
use crate::error::{Error, Result};

/// Most results accepted per query.
pub const MAX_RESULTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "KIS", alias = "kis")]
    Kis,
    #[serde(rename = "VQA", alias = "vqa")]
    Vqa,
    #[serde(rename = "TemporalAlignment", alias = "temporal_alignment", alias = "TRAKE")]
    TemporalAlignment,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Kis => "KIS",
            TaskKind::Vqa => "VQA",
            TaskKind::TemporalAlignment => "TemporalAlignment",
        }
    }
}

/// Ground truth for one query, one JSON object per line in a ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalTask {
    pub query_id: String,
    pub kind: TaskKind,
    pub video: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<[u64; 2]>,
    #[serde(default)]
    pub frame_tolerance: u64,
}

impl EvalTask {
    pub fn validate(&self) -> Result<()> {
        let q = &self.query_id;
        match self.kind {
            TaskKind::Kis if self.frame.is_none() => Err(Error::invalid(format!("{q}: KIS task needs a frame"))),
            TaskKind::Vqa if self.frame.is_none() || self.answer.is_none() => {
                Err(Error::invalid(format!("{q}: VQA task needs a frame and an answer")))
            }
            TaskKind::TemporalAlignment => match self.segment {
                Some([a, b]) if a <= b => Ok(()),
                Some(_) => Err(Error::invalid(format!("{q}: segment start exceeds its end"))),
                None => Err(Error::invalid(format!("{q}: temporal alignment task needs a segment"))),
            },
            _ => Ok(()),
        }
    }
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<EvalTask>> {
    let text = fs::read_to_string(path)?;
    let mut tasks = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: EvalTask = serde_json::from_str(line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultItem {
    pub rank: u32,
    pub video_id: String,
    pub frame_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 5, 20, 50, 100],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks[0] == 0 || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("ks must be strictly increasing positive cutoffs"));
        }
        Ok(())
    }
}

/// Casefolds, trims and collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.nfc().collect::<String>().to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Closed-interval overlap: `max(starts) ≤ min(ends)`.
pub fn segments_overlap(a: [u64; 2], b: [u64; 2]) -> bool {
    a[0].max(b[0]) <= a[1].min(b[1])
}

/// 1.0 when `item` answers `task` correctly, else 0.0.
pub fn r_score(item: &ResultItem, task: &EvalTask) -> Result<f64> {
    let missing = |what: &str| Error::InvalidSubmission(format!("rank {}: {what} missing for {:?} task", item.rank, task.kind));
    let frame_ok = || {
        task.frame
            .is_some_and(|gt| item.frame_index.abs_diff(gt) <= task.frame_tolerance)
    };
    match task.kind {
        TaskKind::Vqa if item.answer.is_none() => return Err(missing("answer")),
        TaskKind::TemporalAlignment if item.segment.is_none() => return Err(missing("segment")),
        _ => {}
    }
    let correct = item.video_id == task.video
        && match task.kind {
            TaskKind::Kis => frame_ok(),
            TaskKind::Vqa => {
                frame_ok()
                    && task
                        .answer
                        .as_deref()
                        .zip(item.answer.as_deref())
                        .is_some_and(|(gt, a)| normalize_answer(gt) == normalize_answer(a))
            }
            TaskKind::TemporalAlignment => task.segment.zip(item.segment).is_some_and(|(gt, s)| segments_overlap(s, gt)),
        };
    Ok(if correct { 1.0 } else { 0.0 })
}

fn check_ranks(items: &[ResultItem]) -> Result<Vec<&ResultItem>> {
    let mut sorted: Vec<&ResultItem> = items.iter().collect();
    sorted.sort_by_key(|i| i.rank);
    for (i, item) in sorted.iter().enumerate() {
        if item.rank as usize != i + 1 {
            let what = if i > 0 && sorted[i - 1].rank == item.rank { "duplicate" } else { "non-contiguous" };
            return Err(Error::InvalidSubmission(format!("{what} rank {}", item.rank)));
        }
    }
    Ok(sorted)
}

/// Mean over `ks` of the best judgement among the first `k` results.
pub fn final_score(items: &[ResultItem], task: &EvalTask, config: &EvalConfig) -> Result<f64> {
    config.validate()?;
    let ranked = check_ranks(items)?;
    let scores = ranked.iter().map(|i| r_score(i, task)).collect::<Result<Vec<_>>>()?;
    let hits = config
        .ks
        .iter()
        .filter(|&&k| scores[..k.min(scores.len())].iter().any(|&s| s == 1.0))
        .count();
    Ok(hits as f64 / config.ks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVerification {
    pub video_id: String,
    pub frame_index: u64,
    pub passed: bool,
    pub timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Checks that `frame_index` lies inside the video and that it survives a
/// frame → time → frame round trip.
pub fn verify_frame(video: &VideoMeta, frame_index: u64) -> FrameVerification {
    let mut record = FrameVerification {
        video_id: video.video_id.clone(),
        frame_index,
        passed: false,
        timestamp_s: 0.0,
        reason: None,
    };
    let timestamp = match time_from_frame_index(frame_index, video.fps) {
        Ok(t) => t,
        Err(e) => {
            record.reason = Some(e.to_string());
            return record;
        }
    };
    record.timestamp_s = timestamp;
    let last = video.last_frame();
    if frame_index > last {
        record.reason = Some(format!("frame {frame_index} is past the last frame {last}"));
    } else if frame_index_from_time(timestamp, video.fps).ok() != Some(frame_index) {
        record.reason = Some(format!("frame {frame_index} does not round-trip through {timestamp} s"));
    } else {
        record.passed = true;
    }
    record
}

fn check_query_id(query_id: &str) -> Result<()> {
    let ok = !query_id.is_empty()
        && !query_id.starts_with('.')
        && query_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !ok {
        return Err(Error::invalid(format!(
            "query id {query_id:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )));
    }
    Ok(())
}

/// CSV body for one query's results in rank order.
pub fn submission_csv(items: &[ResultItem]) -> Result<Vec<u8>> {
    let ranked = check_ranks(items)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for item in ranked {
        let mut row = vec![item.video_id.clone()];
        match (&item.segment, &item.answer) {
            (Some([s, e]), _) => row.extend([s.to_string(), e.to_string()]),
            (None, Some(answer)) => row.extend([item.frame_index.to_string(), answer.clone()]),
            (None, None) => row.push(item.frame_index.to_string()),
        }
        w.write_record(&row).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses one query's CSV for the given task kind.
pub fn parse_submission_csv(bytes: &[u8], kind: TaskKind) -> Result<Vec<ResultItem>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut items = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::InvalidSubmission(e.to_string()))?;
        let bad = |what: &str| Error::InvalidSubmission(format!("line {}: {what}", i + 1));
        let num = |j: usize| -> Result<u64> {
            row.get(j)
                .ok_or_else(|| bad("too few columns"))?
                .trim()
                .parse()
                .map_err(|_| bad("frame index is not a non-negative integer"))
        };
        let video_id = row.get(0).unwrap_or_default().trim().to_owned();
        if video_id.is_empty() {
            return Err(bad("empty video id"));
        }
        let frame_index = num(1)?;
        let (answer, segment) = match kind {
            TaskKind::Kis => (None, None),
            TaskKind::Vqa => (Some(row.get(2).ok_or_else(|| bad("answer column missing"))?.to_owned()), None),
            TaskKind::TemporalAlignment => {
                let end = if row.len() > 2 { num(2)? } else { frame_index };
                if end < frame_index {
                    return Err(bad("segment start exceeds its end"));
                }
                (None, Some([frame_index, end]))
            }
        };
        items.push(ResultItem {
            rank: i as u32 + 1,
            video_id,
            frame_index,
            answer,
            segment,
        });
    }
    Ok(items)
}

static ARCHIVE_LOCK: Mutex<()> = Mutex::new(());

fn zip_err(e: zip::result::ZipError) -> Error {
    Error::InvalidSubmission(format!("archive: {e}"))
}

/// Reads every `<query_id>.csv` entry of an archive, raw.
pub fn read_archive(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut archive = ZipArchive::new(BufReader::new(File::open(path)?)).map_err(zip_err)?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).map_err(zip_err)?;
        let name = entry.name().map_err(zip_err)?.into_owned();
        let Some(query_id) = name.strip_suffix(".csv").map(str::to_owned) else {
            continue;
        };
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes)?;
        out.insert(query_id, bytes);
    }
    Ok(out)
}

fn write_archive(path: &Path, entries: &BTreeMap<String, Vec<u8>>) -> Result<()> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let options = SimpleFileOptions::default().compression_method(CompressionMethod::Deflated);
    for (query_id, bytes) in entries {
        zip.start_file(format!("{query_id}.csv"), options).map_err(zip_err)?;
        zip.write_all(bytes)?;
    }
    let bytes = zip.finish().map_err(zip_err)?.into_inner();
    let tmp = path.with_extension("zip.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes (or replaces) the CSV for `query_id` inside the archive at `path`,
/// keeping other queries' entries. Every result must pass [`verify_frame`]
/// against the video returned by `lookup`.
pub fn build_submission(
    path: &Path,
    query_id: &str,
    items: &[ResultItem],
    lookup: impl Fn(&str) -> Option<VideoMeta>,
) -> Result<PathBuf> {
    check_query_id(query_id)?;
    if items.len() > MAX_RESULTS {
        return Err(Error::InvalidSubmission(format!(
            "{} results given; at most {MAX_RESULTS} are accepted",
            items.len()
        )));
    }
    for item in items {
        let meta = lookup(&item.video_id)
            .ok_or_else(|| Error::NotFound(format!("video {} is not in the corpus", item.video_id)))?;
        let frames = match item.segment {
            Some([s, e]) if s > e => {
                return Err(Error::InvalidSubmission(format!("rank {}: segment start exceeds its end", item.rank)));
            }
            Some([s, e]) => vec![s, e],
            None => vec![item.frame_index],
        };
        for f in frames {
            let v = verify_frame(&meta, f);
            if !v.passed {
                return Err(Error::InvalidSubmission(format!(
                    "rank {} not verified: {}",
                    item.rank,
                    v.reason.unwrap_or_default()
                )));
            }
        }
    }
    let csv = submission_csv(items)?;

    let _serial = ARCHIVE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut entries = if path.exists() { read_archive(path)? } else { BTreeMap::new() };
    entries.insert(query_id.to_owned(), csv);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_archive(path, &entries)?;
    Ok(path.to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub kind: TaskKind,
    pub score: f64,
    pub submitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: Vec<QueryScore>,
    pub mean: f64,
}

/// Scores an archive against ground truth. Queries absent from the archive
/// score 0.
pub fn evaluate(tasks: &[EvalTask], archive: &BTreeMap<String, Vec<u8>>, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut queries = Vec::with_capacity(tasks.len());
    for task in tasks {
        task.validate()?;
        let items = match archive.get(&task.query_id) {
            Some(bytes) => parse_submission_csv(bytes, task.kind)
                .map_err(|e| Error::InvalidSubmission(format!("{}: {e}", task.query_id)))?,
            None => Vec::new(),
        };
        queries.push(QueryScore {
            query_id: task.query_id.clone(),
            kind: task.kind,
            score: final_score(&items, task, config)?,
            submitted: items.len(),
        });
    }
    let mean = if queries.is_empty() {
        0.0
    } else {
        queries.iter().map(|q| q.score).sum::<f64>() / queries.len() as f64
    };
    Ok(EvalReport { queries, mean })
}
