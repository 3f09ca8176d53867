//! Per-node vector store shards with exact top-k retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, Embedding, Modality};
use crate::error::{Error, Result};
use crate::node::NodeId;

pub type EntryId = u64;

/// One cached image: its paired embeddings, payload location and access
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: EntryId,
    pub image_vec: Embedding,
    pub text_vec: Embedding,
    pub payload_uri: String,
    pub caption: String,
    pub created_at: u64,
    pub last_access: u64,
    pub hit_count: u64,
}

impl CacheEntry {
    pub fn new(
        id: EntryId,
        caption: impl Into<String>,
        payload_uri: impl Into<String>,
        image_vec: Embedding,
        text_vec: Embedding,
        created_at: u64,
    ) -> Self {
        CacheEntry {
            id,
            image_vec,
            text_vec,
            payload_uri: payload_uri.into(),
            caption: caption.into(),
            created_at,
            last_access: created_at,
            hit_count: 0,
        }
    }

    pub fn vector(&self, modality: Modality) -> &Embedding {
        match modality {
            Modality::Image => &self.image_vec,
            Modality::Text => &self.text_vec,
        }
    }

    /// Records one served hit at logical time `tick`.
    pub fn touch(&mut self, tick: u64) {
        self.hit_count += 1;
        self.last_access = self.last_access.max(tick);
    }
}

/// Line format of shard files.
#[derive(Debug, Serialize, Deserialize)]
pub struct EntryRecord {
    pub id: EntryId,
    pub caption: String,
    pub payload_uri: String,
    pub image_vec: Vec<f64>,
    pub text_vec: Vec<f64>,
    pub created_at: u64,
    pub hit_count: u64,
    pub last_access: u64,
}

impl From<&CacheEntry> for EntryRecord {
    fn from(e: &CacheEntry) -> Self {
        EntryRecord {
            id: e.id,
            caption: e.caption.clone(),
            payload_uri: e.payload_uri.clone(),
            image_vec: e.image_vec.values().to_vec(),
            text_vec: e.text_vec.values().to_vec(),
            created_at: e.created_at,
            hit_count: e.hit_count,
            last_access: e.last_access,
        }
    }
}

impl TryFrom<EntryRecord> for CacheEntry {
    type Error = Error;

    fn try_from(r: EntryRecord) -> Result<Self> {
        if r.last_access < r.created_at {
            return Err(Error::InvalidParameter(format!(
                "entry {}: last_access {} precedes created_at {}",
                r.id, r.last_access, r.created_at
            )));
        }
        Ok(CacheEntry {
            id: r.id,
            image_vec: Embedding::from_unit(r.image_vec, Modality::Image)?,
            text_vec: Embedding::from_unit(r.text_vec, Modality::Text)?,
            payload_uri: r.payload_uri,
            caption: r.caption,
            created_at: r.created_at,
            last_access: r.last_access,
            hit_count: r.hit_count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: EntryId,
    pub similarity: f64,
}

/// Ordering used by every ranked result: similarity descending, id ascending.
pub(crate) fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id))
}

/// The vector store of one edge node.
///
/// Keeps running sums of the image and text vectors so the node's
/// representation vector is available in O(D) after any mutation.
#[derive(Debug, Clone)]
pub struct Shard {
    node_id: NodeId,
    dim: usize,
    capacity_hint: usize,
    entries: BTreeMap<EntryId, CacheEntry>,
    image_sum: Vec<f64>,
    text_sum: Vec<f64>,
}

impl Shard {
    pub fn new(node_id: NodeId, dim: usize, capacity_hint: usize) -> Self {
        Shard {
            node_id,
            dim,
            capacity_hint,
            entries: BTreeMap::new(),
            image_sum: vec![0.0; dim],
            text_sum: vec![0.0; dim],
        }
    }

    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity_hint(&self) -> usize {
        self.capacity_hint
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: EntryId) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    pub fn touch(&mut self, id: EntryId, tick: u64) -> Result<()> {
        self.entries
            .get_mut(&id)
            .map(|e| e.touch(tick))
            .ok_or(Error::NotFound(id))
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.entries.keys().copied()
    }

    pub fn insert(&mut self, entry: CacheEntry) -> Result<()> {
        for v in [&entry.image_vec, &entry.text_vec] {
            if v.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: v.dim(),
                });
            }
        }
        if entry.image_vec.modality() != Modality::Image || entry.text_vec.modality() != Modality::Text {
            return Err(Error::InvalidParameter(format!(
                "entry {}: image_vec/text_vec carry the wrong modality tags",
                entry.id
            )));
        }
        if self.entries.contains_key(&entry.id) {
            return Err(Error::DuplicateId(entry.id));
        }
        add_into(&mut self.image_sum, entry.image_vec.values(), 1.0);
        add_into(&mut self.text_sum, entry.text_vec.values(), 1.0);
        self.entries.insert(entry.id, entry);
        Ok(())
    }

    /// Removes an entry and hands it back; the caller owns deleting its payload.
    pub fn remove(&mut self, id: EntryId) -> Result<CacheEntry> {
        let entry = self.entries.remove(&id).ok_or(Error::NotFound(id))?;
        if self.entries.is_empty() {
            self.image_sum.iter_mut().for_each(|x| *x = 0.0);
            self.text_sum.iter_mut().for_each(|x| *x = 0.0);
        } else {
            add_into(&mut self.image_sum, entry.image_vec.values(), -1.0);
            add_into(&mut self.text_sum, entry.text_vec.values(), -1.0);
        }
        Ok(entry)
    }

    /// Exact top-k by cosine against the entries' `modality` vectors.
    pub fn top_k(&self, query: &Embedding, modality: Modality, k: usize) -> Result<Vec<Hit>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.values();
        let mut hits: Vec<Hit> = self
            .entries
            .values()
            .map(|e| Hit {
                id: e.id,
                similarity: dot(q, e.vector(modality).values()),
            })
            .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }

    /// Union of the top-k image-vector and top-k text-vector matches for a
    /// text query, as an ascending id set.
    pub fn dual_retrieve(&self, query: &Embedding, k: usize) -> Result<BTreeSet<EntryId>> {
        let mut set: BTreeSet<EntryId> = self
            .top_k(query, Modality::Image, k)?
            .into_iter()
            .map(|h| h.id)
            .collect();
        set.extend(self.top_k(query, Modality::Text, k)?.into_iter().map(|h| h.id));
        Ok(set)
    }

    /// Un-normalized arithmetic mean of the stored image vectors, summed
    /// directly from the entries.
    pub fn centroid(&self) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyShard);
        }
        let mut acc = vec![0.0; self.dim];
        for e in self.entries.values() {
            add_into(&mut acc, e.image_vec.values(), 1.0);
        }
        let n = self.entries.len() as f64;
        Ok(acc.into_iter().map(|x| x / n).collect())
    }

    /// Running sums of image and text vectors, maintained incrementally.
    pub fn running_sums(&self) -> (&[f64], &[f64]) {
        (&self.image_sum, &self.text_sum)
    }

    pub fn save_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for e in self.entries.values() {
            serde_json::to_writer(&mut writer, &EntryRecord::from(e))?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(node_id: NodeId, dim: usize, capacity_hint: usize, reader: impl Read) -> Result<Self> {
        let mut shard = Shard::new(node_id, dim, capacity_hint);
        for entry in read_entries(reader)? {
            shard.insert(entry)?;
        }
        Ok(shard)
    }

    pub fn load(node_id: NodeId, dim: usize, capacity_hint: usize, path: impl AsRef<Path>) -> Result<Self> {
        Shard::load_jsonl(node_id, dim, capacity_hint, File::open(path)?)
    }
}

/// Parses newline-delimited entry records; blank lines are skipped.
pub fn read_entries(reader: impl Read) -> Result<Vec<CacheEntry>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse { line: i + 1, message };
        let record: EntryRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        out.push(CacheEntry::try_from(record).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_entries<'a>(entries: impl IntoIterator<Item = &'a CacheEntry>, mut writer: impl Write) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut writer, &EntryRecord::from(e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn add_into(acc: &mut [f64], v: &[f64], sign: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += sign * x;
    }
}
