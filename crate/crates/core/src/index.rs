//! Segmented lookup tables over ternary codes.
//!
//! Table `i` maps every binary resolution of segment `i` of a code to that
//! code's id. A query looks up each resolution of its own segments, so a
//! code is found in table `i` exactly when the two segments collide.

use serde::{Deserialize, Serialize};

use crate::codec::{to_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::ternary::{expand, SegmentConfig, TernarySegments, MAX_SEGMENT_LEN};

pub const INDEX_MAGIC: &[u8; 4] = b"SDHI";
pub const INDEX_VERSION: u32 = 1;
/// Candidates returned when no limit is given.
pub const DEFAULT_MAX_CANDIDATES: usize = 300;

/// Tables with keys up to this many bits use a dense offset array.
const DENSE_KEY_BITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Layout {
    /// `offsets[key]..offsets[key + 1]` indexes the postings.
    Dense { offsets: Vec<u32> },
    /// Keys present, ascending, with `offsets.len() == keys.len() + 1`.
    Sparse { keys: Vec<u32>, offsets: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Table {
    layout: Layout,
    postings: Vec<u32>,
}

impl Table {
    /// Builds from `(key, id)` pairs already sorted by key then id, deduplicated.
    fn from_sorted(key_bits: usize, pairs: &[(u32, u32)]) -> Self {
        let postings: Vec<u32> = pairs.iter().map(|&(_, id)| id).collect();
        let layout = if key_bits <= DENSE_KEY_BITS {
            let mut offsets = vec![0u32; (1usize << key_bits) + 1];
            for &(k, _) in pairs {
                offsets[k as usize + 1] += 1;
            }
            for i in 1..offsets.len() {
                offsets[i] += offsets[i - 1];
            }
            Layout::Dense { offsets }
        } else {
            let mut keys = Vec::new();
            let mut offsets = vec![0u32];
            for (i, &(k, _)) in pairs.iter().enumerate() {
                if keys.last() != Some(&k) {
                    if !keys.is_empty() {
                        offsets.push(i as u32);
                    }
                    keys.push(k);
                }
            }
            if !keys.is_empty() {
                offsets.push(pairs.len() as u32);
            }
            Layout::Sparse { keys, offsets }
        };
        Table { layout, postings }
    }

    #[inline]
    fn get(&self, key: u32) -> &[u32] {
        match &self.layout {
            Layout::Dense { offsets } => match offsets.get(key as usize + 1) {
                Some(&end) => &self.postings[offsets[key as usize] as usize..end as usize],
                None => &[],
            },
            Layout::Sparse { keys, offsets } => match keys.binary_search(&key) {
                Ok(i) => &self.postings[offsets[i] as usize..offsets[i + 1] as usize],
                Err(_) => &[],
            },
        }
    }

    /// Nonempty `(key, postings)` entries in ascending key order.
    fn entries(&self) -> Box<dyn Iterator<Item = (u32, &[u32])> + '_> {
        match &self.layout {
            Layout::Dense { offsets } => Box::new(
                offsets
                    .windows(2)
                    .enumerate()
                    .filter(|(_, w)| w[1] > w[0])
                    .map(|(k, w)| (k as u32, &self.postings[w[0] as usize..w[1] as usize])),
            ),
            Layout::Sparse { keys, offsets } => Box::new(
                keys.iter()
                    .zip(offsets.windows(2))
                    .map(move |(&k, w)| (k, &self.postings[w[0] as usize..w[1] as usize])),
            ),
        }
    }
}

/// One recalled code and the number of tables it was found in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub hits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallResult {
    /// Hits descending, id ascending within equal hits.
    pub candidates: Vec<Candidate>,
    pub truncated_to: usize,
}

impl RecallResult {
    pub fn ids(&self) -> Vec<u32> {
        self.candidates.iter().map(|c| c.id).collect()
    }
}

/// `S` immutable lookup tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedIndex {
    cfg: SegmentConfig,
    item_count: u32,
    tables: Vec<Table>,
}

impl SegmentedIndex {
    /// Indexes every binary resolution of every code segment.
    pub fn build(codes: &[TernarySegments], cfg: &SegmentConfig) -> Result<Self> {
        cfg.validate()?;
        let item_count = to_u32(codes.len(), "item count")?;
        for (id, c) in codes.iter().enumerate() {
            c.check(cfg)
                .map_err(|e| Error::InvalidInput(format!("code {id}: {e}")))?;
        }
        let tables = (0..cfg.num_segments())
            .map(|i| {
                let mut pairs: Vec<(u32, u32)> = Vec::new();
                for (id, c) in codes.iter().enumerate() {
                    pairs.extend(expand(c.segment(i)).into_iter().map(|k| (k.0, id as u32)));
                }
                // ids are pushed in ascending order, so a stable sort by key suffices
                pairs.sort_by_key(|&(k, _)| k);
                Table::from_sorted(cfg.seg_len, &pairs)
            })
            .collect();
        Ok(Self {
            cfg: *cfg,
            item_count,
            tables,
        })
    }

    /// Indexes one binary key per item and table, `keys[item][table]`.
    ///
    /// `cfg.max_relaxed` must be 0.
    pub fn from_binary_keys(keys: &[Vec<u32>], cfg: &SegmentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.max_relaxed != 0 {
            return Err(Error::config("binary-key tables cannot hold relaxed bits"));
        }
        let item_count = to_u32(keys.len(), "item count")?;
        let s = cfg.num_segments();
        for (id, k) in keys.iter().enumerate() {
            if k.len() != s {
                return Err(Error::shape(format!("item {id} has {} keys, expected {s}", k.len())));
            }
            if let Some(&bad) = k.iter().find(|&&v| cfg.seg_len < 32 && v >> cfg.seg_len != 0) {
                return Err(Error::InvalidInput(format!(
                    "item {id}: key {bad:#x} wider than {} bits",
                    cfg.seg_len
                )));
            }
        }
        let tables = (0..s)
            .map(|i| {
                let mut pairs: Vec<(u32, u32)> = keys.iter().enumerate().map(|(id, k)| (k[i], id as u32)).collect();
                pairs.sort_by_key(|&(k, _)| k);
                Table::from_sorted(cfg.seg_len, &pairs)
            })
            .collect();
        Ok(Self {
            cfg: *cfg,
            item_count,
            tables,
        })
    }

    pub fn config(&self) -> &SegmentConfig {
        &self.cfg
    }

    pub fn item_count(&self) -> usize {
        self.item_count as usize
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn postings(&self, table: usize, key: u32) -> &[u32] {
        self.tables[table].get(key)
    }

    /// Number of distinct keys stored in a table.
    pub fn key_count(&self, table: usize) -> usize {
        self.tables[table].entries().count()
    }

    pub fn posting_total(&self, table: usize) -> usize {
        self.tables[table].postings.len()
    }

    /// Recalls with fresh scratch space; use a [`Searcher`] for many queries.
    pub fn recall(&self, query: &TernarySegments, max_n: usize) -> Result<RecallResult> {
        Searcher::new(self).recall(query, max_n)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        let bits = u16::try_from(self.cfg.total_bits)
            .map_err(|_| Error::InvalidInput("code length does not fit in 16 bits".into()))?;
        w.u16(bits);
        w.u16(self.cfg.seg_len as u16);
        w.u8(self.cfg.max_relaxed as u8);
        w.u32(self.item_count);
        for t in &self.tables {
            let entries: Vec<(u32, &[u32])> = t.entries().collect();
            w.u32(entries.len() as u32);
            for (k, p) in entries {
                w.u32(k);
                w.u32(p.len() as u32);
                for &id in p {
                    w.u32(id);
                }
            }
        }
        Ok(w.buf)
    }

    /// Parses an index; the relax threshold is not stored and comes back as the default.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(INDEX_MAGIC)?;
        r.version(INDEX_VERSION)?;
        let at = r.offset() as usize;
        let bits = r.u16("code length")? as usize;
        let seg_len = r.u16("segment length")? as usize;
        let max_relaxed = r.u8("relax limit")? as usize;
        let cfg = SegmentConfig::new(bits, seg_len, max_relaxed, SegmentConfig::DEFAULT_THRESHOLD)
            .map_err(|e| r.error_at(at, e.to_string()))?;
        let item_count = r.u32("item count")?;
        let key_limit = if seg_len >= MAX_SEGMENT_LEN {
            u64::from(u32::MAX) + 1
        } else {
            1u64 << seg_len
        };

        let mut tables = Vec::with_capacity(cfg.num_segments());
        for t in 0..cfg.num_segments() {
            let key_count = r.u32("key count")? as usize;
            // each entry needs at least 8 bytes
            if key_count > r.remaining() / 8 {
                return r.fail(format!("table {t} declares {key_count} keys, more than the file holds"));
            }
            let mut pairs: Vec<(u32, u32)> = Vec::new();
            let mut prev: Option<u32> = None;
            for _ in 0..key_count {
                let at = r.offset() as usize;
                let key = r.u32("key")?;
                if u64::from(key) >= key_limit || prev.is_some_and(|p| key <= p) {
                    return Err(r.error_at(at, format!("table {t}: key {key:#x} out of range or order")));
                }
                prev = Some(key);
                let len = r.u32("posting length")? as usize;
                if len > r.remaining() / 4 {
                    return r.fail(format!("table {t}: posting list of {len} exceeds the file"));
                }
                let mut last: Option<u32> = None;
                for _ in 0..len {
                    let at = r.offset() as usize;
                    let id = r.u32("posting")?;
                    if id >= item_count || last.is_some_and(|l| id <= l) {
                        return Err(r.error_at(at, format!("table {t}: posting {id} out of range or order")));
                    }
                    last = Some(id);
                    pairs.push((key, id));
                }
            }
            tables.push(Table::from_sorted(seg_len, &pairs));
        }
        r.finish()?;
        Ok(Self {
            cfg,
            item_count,
            tables,
        })
    }
}

/// Reusable scratch space for recall against one index.
///
/// Reset cost is proportional to the codes touched by the previous query,
/// not to the index size.
pub struct Searcher<'i> {
    index: &'i SegmentedIndex,
    hits: Vec<u32>,
    /// Last table (plus one) that counted each code, for per-table dedup.
    last_table: Vec<u32>,
    touched: Vec<u32>,
    buckets: Vec<Vec<u32>>,
}

impl<'i> Searcher<'i> {
    pub fn new(index: &'i SegmentedIndex) -> Self {
        let n = index.item_count();
        Self {
            index,
            hits: vec![0; n],
            last_table: vec![0; n],
            touched: Vec::new(),
            buckets: vec![Vec::new(); index.table_count() + 1],
        }
    }

    pub fn recall(&mut self, query: &TernarySegments, max_n: usize) -> Result<RecallResult> {
        query
            .check(&self.index.cfg)
            .map_err(|e| Error::shape(format!("query: {e}")))?;
        let index = self.index;
        self.count(
            |t| expand(query.segment(t)).into_iter().map(|k| k.0),
            index.table_count(),
        );
        Ok(self.rank(max_n))
    }

    /// Recall from explicit per-table keys, `keys[table]`.
    pub fn recall_keys(&mut self, keys: &[Vec<u32>], max_n: usize) -> Result<RecallResult> {
        if keys.len() != self.index.table_count() {
            return Err(Error::shape(format!(
                "{} key lists for {} tables",
                keys.len(),
                self.index.table_count()
            )));
        }
        self.count(|t| keys[t].iter().copied(), keys.len());
        Ok(self.rank(max_n))
    }

    fn count<I: Iterator<Item = u32>>(&mut self, keys_of: impl Fn(usize) -> I, tables: usize) {
        for &id in &self.touched {
            self.hits[id as usize] = 0;
            self.last_table[id as usize] = 0;
        }
        self.touched.clear();
        for t in 0..tables {
            let stamp = t as u32 + 1;
            for key in keys_of(t) {
                for &id in self.index.tables[t].get(key) {
                    let i = id as usize;
                    if self.last_table[i] == stamp {
                        continue;
                    }
                    self.last_table[i] = stamp;
                    if self.hits[i] == 0 {
                        self.touched.push(id);
                    }
                    self.hits[i] += 1;
                }
            }
        }
    }

    fn rank(&mut self, max_n: usize) -> RecallResult {
        for b in &mut self.buckets {
            b.clear();
        }
        for &id in &self.touched {
            self.buckets[self.hits[id as usize] as usize].push(id);
        }
        let mut candidates = Vec::with_capacity(max_n.min(self.touched.len()));
        for hits in (1..self.buckets.len()).rev() {
            let room = max_n - candidates.len();
            if room == 0 {
                break;
            }
            let bucket = &mut self.buckets[hits];
            if bucket.len() > room {
                bucket.select_nth_unstable(room);
                bucket.truncate(room);
            }
            bucket.sort_unstable();
            candidates.extend(bucket.iter().map(|&id| Candidate { id, hits: hits as u32 }));
        }
        RecallResult {
            candidates,
            truncated_to: max_n,
        }
    }
}
