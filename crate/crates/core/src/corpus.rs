//! The searchable corpus: a catalog of ingested videos next to the three
//! vector collections, with all-or-nothing commits and atomic snapshots.
//!
//! A store directory looks like
//!
//! ```text
//! <store>/CURRENT                 name of the live snapshot, e.g. "snapshot-000003"
//! <store>/snapshot-000003/catalog.jsonl
//! <store>/snapshot-000003/keyframes.mrvv  (+ .meta.jsonl, same for the others)
//! ```
//!
//! A snapshot is written to a temporary directory, renamed into place, and
//! only then published by replacing `CURRENT`, so readers of the directory
//! never see a half-written state.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::domain::{KeyframeRecord, TranscriptInterval, VideoMeta, VideoSummary};
use crate::error::{Error, Result};
use crate::providers::Providers;
use crate::vectorstore::{KEYFRAMES, NewRecord, SUMMARIES, TRANSCRIPTS, VectorStore};

const CURRENT: &str = "CURRENT";
const CATALOG: &str = "catalog.jsonl";
const SNAPSHOT_PREFIX: &str = "snapshot-";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusDims {
    pub keyframes: usize,
    pub transcripts: usize,
    pub summaries: usize,
}

impl CorpusDims {
    pub fn uniform(dim: usize) -> Self {
        CorpusDims {
            keyframes: dim,
            transcripts: dim,
            summaries: dim,
        }
    }

    pub fn from_providers(providers: &Providers) -> Self {
        CorpusDims {
            keyframes: providers.image.dim(),
            transcripts: providers.text.dim(),
            summaries: providers.text.dim(),
        }
    }

    fn of(&self, collection: &str) -> usize {
        match collection {
            KEYFRAMES => self.keyframes,
            TRANSCRIPTS => self.transcripts,
            _ => self.summaries,
        }
    }
}

/// Everything ingested for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub meta: VideoMeta,
    pub keyframes: Vec<KeyframeRecord>,
    pub intervals: Vec<TranscriptInterval>,
    pub summary: Option<VideoSummary>,
}

impl VideoEntry {
    /// Keyframes with `start_s ≤ timestamp ≤ end_s`, in frame order.
    pub fn keyframes_between(&self, start_s: f64, end_s: f64) -> Vec<KeyframeRecord> {
        self.keyframes
            .iter()
            .filter(|k| start_s <= k.timestamp_s && k.timestamp_s <= end_s)
            .cloned()
            .collect()
    }
}

#[derive(Debug)]
struct Indexed {
    entry: VideoEntry,
    keyframe_slots: HashMap<String, usize>,
    interval_slots: HashMap<String, usize>,
}

impl Indexed {
    fn new(entry: VideoEntry) -> Self {
        let keyframe_slots = entry
            .keyframes
            .iter()
            .enumerate()
            .map(|(i, k)| (k.keyframe_id.clone(), i))
            .collect();
        let interval_slots = entry
            .intervals
            .iter()
            .enumerate()
            .map(|(i, t)| (t.interval_id.clone(), i))
            .collect();
        Indexed {
            entry,
            keyframe_slots,
            interval_slots,
        }
    }
}

/// Cloneable read handle on one catalog entry.
#[derive(Debug, Clone)]
pub struct VideoHandle(Arc<Indexed>);

impl VideoHandle {
    pub fn entry(&self) -> &VideoEntry {
        &self.0.entry
    }

    pub fn keyframe(&self, keyframe_id: &str) -> Option<&KeyframeRecord> {
        self.0
            .keyframe_slots
            .get(keyframe_id)
            .map(|&i| &self.0.entry.keyframes[i])
    }

    pub fn interval(&self, interval_id: &str) -> Option<&TranscriptInterval> {
        self.0
            .interval_slots
            .get(interval_id)
            .map(|&i| &self.0.entry.intervals[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub videos: usize,
    pub keyframes: usize,
    pub transcripts: usize,
    pub summaries: usize,
}

#[derive(Debug)]
pub struct Corpus {
    dims: CorpusDims,
    catalog: RwLock<BTreeMap<String, VideoHandle>>,
    vectors: VectorStore,
    pending: Mutex<BTreeSet<String>>,
    save_lock: Mutex<()>,
}

/// Holds a video id reserved for an in-progress ingest.
#[derive(Debug)]
pub struct Reservation<'a> {
    corpus: &'a Corpus,
    video_id: String,
}

impl Drop for Reservation<'_> {
    fn drop(&mut self) {
        self.corpus
            .pending
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.video_id);
    }
}

impl Corpus {
    pub fn new(dims: CorpusDims) -> Result<Self> {
        let mut vectors = VectorStore::new();
        for name in [KEYFRAMES, TRANSCRIPTS, SUMMARIES] {
            vectors.create_collection(name, dims.of(name))?;
        }
        Ok(Corpus {
            dims,
            catalog: RwLock::new(BTreeMap::new()),
            vectors,
            pending: Mutex::new(BTreeSet::new()),
            save_lock: Mutex::new(()),
        })
    }

    pub fn dims(&self) -> CorpusDims {
        self.dims
    }

    pub fn vectors(&self) -> &VectorStore {
        &self.vectors
    }

    pub fn counts(&self) -> CorpusCounts {
        // Commits write vectors under the catalog write lock, so holding the
        // read lock here gives matching numbers.
        let catalog = self.catalog_read();
        let count = |name| self.vectors.count(name).unwrap_or(0);
        CorpusCounts {
            videos: catalog.len(),
            keyframes: count(KEYFRAMES),
            transcripts: count(TRANSCRIPTS),
            summaries: count(SUMMARIES),
        }
    }

    fn catalog_read(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<String, VideoHandle>> {
        self.catalog.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn video(&self, video_id: &str) -> Option<VideoHandle> {
        self.catalog_read().get(video_id).cloned()
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.catalog_read().keys().cloned().collect()
    }

    pub fn contains(&self, video_id: &str) -> bool {
        self.catalog_read().contains_key(video_id)
    }

    /// Claims `video_id` for ingest; fails if it is stored or being ingested.
    pub fn reserve(&self, video_id: &str) -> Result<Reservation<'_>> {
        let mut pending = self.pending.lock().unwrap_or_else(|e| e.into_inner());
        if self.contains(video_id) || pending.contains(video_id) {
            return Err(Error::Conflict(format!("video {video_id} already ingested")));
        }
        pending.insert(video_id.to_owned());
        Ok(Reservation {
            corpus: self,
            video_id: video_id.to_owned(),
        })
    }

    /// Adds a video and its vector records. Either everything lands or
    /// nothing does.
    pub fn commit(&self, entry: VideoEntry, records: BTreeMap<String, Vec<NewRecord>>) -> Result<()> {
        let video_id = entry.meta.video_id.clone();
        let mut catalog = self.catalog.write().unwrap_or_else(|e| e.into_inner());
        if catalog.contains_key(&video_id) {
            return Err(Error::Conflict(format!("video {video_id} already ingested")));
        }
        for recs in records.values() {
            if let Some(r) = recs.iter().find(|r| r.metadata.get("video_id") != Some(&video_id)) {
                return Err(Error::invalid(format!("record {} does not belong to {video_id}", r.id)));
            }
        }
        self.vectors.insert_batch(records)?;
        catalog.insert(video_id, VideoHandle(Arc::new(Indexed::new(entry))));
        Ok(())
    }

    fn encode(&self) -> Vec<(String, Vec<u8>)> {
        let catalog = self.catalog_read();
        let mut lines = Vec::new();
        for handle in catalog.values() {
            serde_json::to_writer(&mut lines, handle.entry()).expect("in-memory json write");
            lines.push(b'\n');
        }
        let mut files = self.vectors.encode();
        files.push((CATALOG.to_owned(), lines));
        files
    }

    /// Writes a new snapshot generation under `dir` and publishes it.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let _serial = self.save_lock.lock().unwrap_or_else(|e| e.into_inner());
        let files = self.encode();
        fs::create_dir_all(dir)?;
        let generation = list_generations(dir)?.last().map_or(1, |g| g + 1);
        let name = format!("{SNAPSHOT_PREFIX}{generation:06}");
        let tmp = dir.join(format!(".{name}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        for (file, bytes) in files {
            let mut f = fs::File::create(tmp.join(file))?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        let target = dir.join(&name);
        fs::rename(&tmp, &target)?;

        let current_tmp = dir.join(".CURRENT.tmp");
        fs::write(&current_tmp, format!("{name}\n"))?;
        fs::File::open(&current_tmp)?.sync_all()?;
        fs::rename(&current_tmp, dir.join(CURRENT))?;

        for old in list_generations(dir)? {
            if old < generation {
                let _ = fs::remove_dir_all(dir.join(format!("{SNAPSHOT_PREFIX}{old:06}")));
            }
        }
        Ok(target)
    }

    /// Opens the live snapshot under `dir`, or an empty corpus when the
    /// directory has none yet.
    pub fn open(dir: &Path, dims: CorpusDims) -> Result<Self> {
        let current = dir.join(CURRENT);
        if !current.exists() {
            return Corpus::new(dims);
        }
        let name = fs::read_to_string(&current)?;
        let name = name.trim();
        if !name.starts_with(SNAPSHOT_PREFIX) || name.contains(['/', '\\']) {
            return Err(Error::corrupt(format!("CURRENT names {name:?}")));
        }
        let snap = dir.join(name);
        let vectors = VectorStore::load(&snap)?;
        for coll in [KEYFRAMES, TRANSCRIPTS, SUMMARIES] {
            let stored = vectors
                .dim(coll)
                .map_err(|_| Error::corrupt(format!("snapshot {name} lacks collection {coll}")))?;
            if stored != dims.of(coll) {
                return Err(Error::invalid(format!(
                    "collection {coll} was built with dim {stored} but providers produce dim {}",
                    dims.of(coll)
                )));
            }
        }

        let text = fs::read_to_string(snap.join(CATALOG))
            .map_err(|e| Error::corrupt(format!("{name}/{CATALOG}: {e}")))?;
        let mut catalog = BTreeMap::new();
        let (mut n_kf, mut n_tr, mut n_su) = (0, 0, 0);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let entry: VideoEntry = serde_json::from_str(line)
                .map_err(|e| Error::corrupt(format!("{CATALOG} line {}: {e}", i + 1)))?;
            n_kf += entry.keyframes.len();
            n_tr += entry.intervals.len();
            n_su += usize::from(entry.summary.is_some());
            let id = entry.meta.video_id.clone();
            if catalog.insert(id.clone(), VideoHandle(Arc::new(Indexed::new(entry)))).is_some() {
                return Err(Error::corrupt(format!("{CATALOG} repeats video {id}")));
            }
        }
        let counts = (
            vectors.count(KEYFRAMES)?,
            vectors.count(TRANSCRIPTS)?,
            vectors.count(SUMMARIES)?,
        );
        if counts != (n_kf, n_tr, n_su) {
            return Err(Error::corrupt(format!(
                "catalog lists {n_kf}/{n_tr}/{n_su} records but collections hold {}/{}/{}",
                counts.0, counts.1, counts.2
            )));
        }
        Ok(Corpus {
            dims,
            catalog: RwLock::new(catalog),
            vectors,
            pending: Mutex::new(BTreeSet::new()),
            save_lock: Mutex::new(()),
        })
    }
}

fn list_generations(dir: &Path) -> Result<Vec<u64>> {
    let mut gens = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(n) = name
            .to_str()
            .and_then(|s| s.strip_prefix(SNAPSHOT_PREFIX))
            .and_then(|s| s.parse().ok())
        {
            gens.push(n);
        }
    }
    gens.sort_unstable();
    Ok(gens)
}
