//! Named collections of unit vectors with exact top-k cosine search.
//!
//! Each collection is an append-only flat array scanned in full per query, so
//! results are exact and reproducible. Scores are dot products of the stored
//! unit vectors accumulated in f64; ties sort by ascending id.
//!
//! # On-disk layout
//!
//! `<name>.mrvv` holds the vectors:
//!
//! ```text
//! "MRVV" | version u32 | dim u32 | count u64
//! count × ( id_len u16 | id utf-8 | dim × f32 )
//! crc32 u32            (over every preceding byte)
//! ```
//!
//! All integers and floats are little-endian. `<name>.meta.jsonl` holds one
//! JSON object per record, `{"id": .., "video_id": .., ...}`. Records are
//! written in ascending id order so identical contents give identical bytes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use crate::domain::{Embedding, NORM_TOLERANCE, dot};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MRVV";
pub const FORMAT_VERSION: u32 = 1;

pub const KEYFRAMES: &str = "keyframes";
pub const TRANSCRIPTS: &str = "transcripts";
pub const SUMMARIES: &str = "summaries";

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
    pub metadata: Metadata,
}

/// Conjunction of `key ∈ values` clauses over record metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filter {
    clauses: BTreeMap<String, BTreeSet<String>>,
}

impl Filter {
    pub fn new() -> Self {
        Filter::default()
    }

    pub fn eq(self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.any_of(key, [value.into()])
    }

    pub fn any_of<I, S>(mut self, key: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = values.into_iter().map(Into::into).collect();
        match self.clauses.entry(key.into()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(set);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let both = o.get().intersection(&set).cloned().collect();
                o.insert(both);
            }
        }
        self
    }

    pub fn video_ids<I, S>(video_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Filter::new().any_of("video_id", video_ids)
    }

    pub fn matches(&self, metadata: &Metadata) -> bool {
        self.clauses
            .iter()
            .all(|(k, allowed)| metadata.get(k).is_some_and(|v| allowed.contains(v)))
    }
}

/// Heap entry ordered so that the *worst* hit is the heap maximum.
struct Candidate<'a> {
    score: f64,
    id: &'a str,
    slot: usize,
}

impl Candidate<'_> {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// A record staged for insertion.
#[derive(Debug, Clone)]
pub struct NewRecord {
    pub id: String,
    pub vector: Embedding,
    pub metadata: Metadata,
}

#[derive(Debug, Clone)]
pub struct Collection {
    name: String,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    metadata: Vec<Metadata>,
    slots: HashMap<String, usize>,
}

impl Collection {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(Error::invalid("collection dim must be positive"));
        }
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::invalid(format!("bad collection name {name:?}")));
        }
        Ok(Collection {
            name,
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            metadata: Vec::new(),
            slots: HashMap::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<(&[f32], &Metadata)> {
        self.slots.get(id).map(|&s| (self.vector(s), &self.metadata[s]))
    }

    fn vector(&self, slot: usize) -> &[f32] {
        &self.vectors[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Checks a record against this collection without inserting it.
    pub fn check(&self, record: &NewRecord) -> Result<()> {
        if record.vector.dim() != self.dim {
            return Err(Error::invalid(format!(
                "vector of dim {} for collection {} of dim {}",
                record.vector.dim(),
                self.name,
                self.dim
            )));
        }
        if record.id.is_empty() || record.id.len() > usize::from(u16::MAX) {
            return Err(Error::invalid("record id must be 1..=65535 bytes"));
        }
        if !record.metadata.contains_key("video_id") {
            return Err(Error::invalid("metadata must include video_id"));
        }
        if record.metadata.contains_key("id") {
            return Err(Error::invalid("metadata key \"id\" is reserved"));
        }
        if self.contains(&record.id) {
            return Err(Error::Conflict(format!(
                "id {} already exists in {}",
                record.id, self.name
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, record: NewRecord) -> Result<()> {
        self.check(&record)?;
        self.push(record.id, record.vector.values(), record.metadata);
        Ok(())
    }

    fn push(&mut self, id: String, vector: &[f32], metadata: Metadata) {
        self.slots.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.extend_from_slice(vector);
        self.metadata.push(metadata);
    }

    pub fn search(&self, query: &Embedding, k: usize, filter: Option<&Filter>) -> Result<Vec<SearchHit>> {
        if query.dim() != self.dim {
            return Err(Error::invalid(format!(
                "query of dim {} against collection {} of dim {}",
                query.dim(),
                self.name,
                self.dim
            )));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = query.values();
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for slot in 0..self.ids.len() {
            if filter.is_some_and(|f| !f.matches(&self.metadata[slot])) {
                continue;
            }
            let cand = Candidate {
                score: dot(q, self.vector(slot)),
                id: &self.ids[slot],
                slot,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| SearchHit {
                id: c.id.to_owned(),
                score: c.score,
                metadata: self.metadata[c.slot].clone(),
            })
            .collect())
    }

    fn sorted_slots(&self) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..self.ids.len()).collect();
        slots.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        slots
    }

    /// Vector file bytes, see the module docs for the layout.
    pub fn encode_vectors(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.ids.len() * (2 + 16 + 4 * self.dim) + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for slot in self.sorted_slots() {
            let id = self.ids[slot].as_bytes();
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id);
            for v in self.vector(slot) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn encode_metadata(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for slot in self.sorted_slots() {
            let mut obj = serde_json::Map::new();
            obj.insert("id".into(), self.ids[slot].clone().into());
            for (k, v) in &self.metadata[slot] {
                obj.insert(k.clone(), v.clone().into());
            }
            serde_json::to_writer(&mut out, &obj).expect("in-memory json write");
            out.push(b'\n');
        }
        out
    }

    pub fn decode(name: &str, vectors: &[u8], metadata: &[u8]) -> Result<Self> {
        let mut r = Reader::new(vectors, name)?;
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut coll = Collection::new(name, dim)?;

        let mut meta_by_id: HashMap<String, Metadata> = HashMap::new();
        for (n, line) in metadata.split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut obj: BTreeMap<String, String> = serde_json::from_slice(line)
                .map_err(|e| Error::corrupt(format!("{name} metadata line {}: {e}", n + 1)))?;
            let id = obj
                .remove("id")
                .ok_or_else(|| Error::corrupt(format!("{name} metadata line {} has no id", n + 1)))?;
            if !obj.contains_key("video_id") {
                return Err(Error::corrupt(format!("{name} metadata for {id} has no video_id")));
            }
            meta_by_id.insert(id, obj);
        }

        let mut values = Vec::with_capacity(dim);
        for _ in 0..count {
            let id_len = usize::from(r.u16()?);
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| Error::corrupt(format!("{name}: id is not utf-8")))?
                .to_owned();
            values.clear();
            for _ in 0..dim {
                values.push(r.f32()?);
            }
            let norm = dot(&values, &values).sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::corrupt(format!("{name}: vector {id} is not unit norm")));
            }
            if coll.contains(&id) {
                return Err(Error::corrupt(format!("{name}: duplicate id {id}")));
            }
            let meta = meta_by_id
                .remove(&id)
                .ok_or_else(|| Error::corrupt(format!("{name}: no metadata for {id}")))?;
            coll.push(id, &values, meta);
        }
        r.finish()?;
        if !meta_by_id.is_empty() {
            return Err(Error::corrupt(format!(
                "{name}: {} metadata rows without vectors",
                meta_by_id.len()
            )));
        }
        Ok(coll)
    }
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], name: &'a str) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 8 + 4 {
            return Err(Error::corrupt(format!("{name}: vector file truncated")));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
        if &body[..4] != MAGIC {
            return Err(Error::corrupt(format!("{name}: bad magic")));
        }
        if crc32fast::hash(body) != stored {
            return Err(Error::corrupt(format!("{name}: checksum mismatch")));
        }
        let mut r = Reader { body, pos: 4, name };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::corrupt(format!("{name}: unsupported format version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.body.len());
        let end = end.ok_or_else(|| Error::corrupt(format!("{}: vector file truncated", self.name)))?;
        let s = &self.body[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.body.len() {
            Ok(())
        } else {
            Err(Error::corrupt(format!("{}: trailing bytes after records", self.name)))
        }
    }
}

/// A set of named collections, each behind its own reader-writer lock.
#[derive(Debug, Default)]
pub struct VectorStore {
    collections: BTreeMap<String, RwLock<Collection>>,
}

fn read(c: &RwLock<Collection>) -> RwLockReadGuard<'_, Collection> {
    c.read().unwrap_or_else(|e| e.into_inner())
}

fn write(c: &RwLock<Collection>) -> RwLockWriteGuard<'_, Collection> {
    c.write().unwrap_or_else(|e| e.into_inner())
}

impl VectorStore {
    pub fn new() -> Self {
        VectorStore::default()
    }

    pub fn create_collection(&mut self, name: &str, dim: usize) -> Result<()> {
        if self.collections.contains_key(name) {
            return Err(Error::Conflict(format!("collection {name} already exists")));
        }
        self.collections
            .insert(name.to_owned(), RwLock::new(Collection::new(name, dim)?));
        Ok(())
    }

    pub fn collection_names(&self) -> impl Iterator<Item = &str> {
        self.collections.keys().map(String::as_str)
    }

    fn lock(&self, name: &str) -> Result<&RwLock<Collection>> {
        self.collections
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("collection {name}")))
    }

    pub fn dim(&self, name: &str) -> Result<usize> {
        Ok(read(self.lock(name)?).dim())
    }

    pub fn count(&self, name: &str) -> Result<usize> {
        Ok(read(self.lock(name)?).len())
    }

    pub fn read(&self, name: &str) -> Result<RwLockReadGuard<'_, Collection>> {
        Ok(read(self.lock(name)?))
    }

    pub fn insert(&self, name: &str, id: impl Into<String>, vector: Embedding, metadata: Metadata) -> Result<()> {
        write(self.lock(name)?).insert(NewRecord {
            id: id.into(),
            vector,
            metadata,
        })
    }

    /// Inserts records into several collections all-or-nothing. Write locks
    /// are taken in name order and every record is checked before any is
    /// written.
    pub fn insert_batch(&self, batch: BTreeMap<String, Vec<NewRecord>>) -> Result<()> {
        let mut guards = Vec::with_capacity(batch.len());
        for (name, records) in batch {
            guards.push((write(self.lock(&name)?), records));
        }
        for (coll, records) in &guards {
            let mut seen = BTreeSet::new();
            for r in records {
                coll.check(r)?;
                if !seen.insert(r.id.as_str()) {
                    return Err(Error::Conflict(format!("id {} repeated in batch", r.id)));
                }
            }
        }
        for (mut coll, records) in guards {
            for r in records {
                coll.push(r.id, r.vector.values(), r.metadata);
            }
        }
        Ok(())
    }

    pub fn search(&self, name: &str, query: &Embedding, k: usize, filter: Option<&Filter>) -> Result<Vec<SearchHit>> {
        read(self.lock(name)?).search(query, k, filter)
    }

    /// Encodes every collection under simultaneous read locks, returning
    /// `(file name, bytes)` pairs.
    pub fn encode(&self) -> Vec<(String, Vec<u8>)> {
        let guards: Vec<_> = self.collections.values().map(read).collect();
        let mut files = Vec::with_capacity(guards.len() * 2);
        for c in &guards {
            files.push((format!("{}.mrvv", c.name()), c.encode_vectors()));
            files.push((format!("{}.meta.jsonl", c.name()), c.encode_metadata()));
        }
        files
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.encode() {
            let mut f = fs::File::create(dir.join(name))?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut store = VectorStore::new();
        let mut names = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "mrvv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_owned());
                }
            }
        }
        names.sort();
        for name in names {
            let vectors = fs::read(dir.join(format!("{name}.mrvv")))?;
            let meta_path = dir.join(format!("{name}.meta.jsonl"));
            let metadata = fs::read(&meta_path)
                .map_err(|e| Error::corrupt(format!("{}: {e}", meta_path.display())))?;
            let coll = Collection::decode(&name, &vectors, &metadata)?;
            store.collections.insert(name, RwLock::new(coll));
        }
        Ok(store)
    }
}
