//! On-disk formats: embeddings, relevance pairs, checkpoints and indexes.
//!
//! All binary formats are little-endian and start with a four-byte magic and
//! a `u32` version. Writes go to a temporary file in the target directory and
//! are renamed into place.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::codec::{to_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::hashnet::{Dense, HashHead};
use crate::index::SegmentedIndex;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SDHE";
pub const EMBEDDING_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDHM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Dense vectors of one modality, row `i` belonging to item `i`.
pub type EmbeddingStore = Matrix<f32>;

/// Replaces `path` with `bytes` via a temporary file and rename.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { offset, reason } => Error::Format {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

pub fn embeddings_to_bytes(store: &EmbeddingStore) -> Result<Vec<u8>> {
    if store.rows() == 0 || store.cols() == 0 {
        return Err(Error::InvalidInput(
            "an embedding file needs at least one vector of positive dimension".into(),
        ));
    }
    let mut w = Writer::default();
    w.bytes(EMBEDDING_MAGIC);
    w.u32(EMBEDDING_VERSION);
    w.u32(to_u32(store.rows(), "count")?);
    w.u32(to_u32(store.cols(), "dimension")?);
    w.f32s(store.as_slice());
    Ok(w.buf)
}

pub fn embeddings_from_bytes(buf: &[u8]) -> Result<EmbeddingStore> {
    let mut r = Reader::new(buf);
    r.magic(EMBEDDING_MAGIC)?;
    r.version(EMBEDDING_VERSION)?;
    let at = r.offset();
    let count = r.u32("count")? as usize;
    if count == 0 {
        return Err(Error::Format {
            offset: at,
            reason: "count is zero".into(),
        });
    }
    let at = r.offset();
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::Format {
            offset: at,
            reason: "dimension is zero".into(),
        });
    }
    let start = r.offset();
    let n = count.checked_mul(dim).ok_or_else(|| Error::Format {
        offset: at,
        reason: "count x dimension overflows".into(),
    })?;
    let data = r.f32s(n, "payload")?;
    r.finish()?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format {
            offset: start + 4 * i as u64,
            reason: format!("non-finite value in vector {} component {}", i / dim, i % dim),
        });
    }
    Matrix::from_vec(count, dim, data)
}

pub fn save_embeddings(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<()> {
    atomic_write(path, &embeddings_to_bytes(store)?)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    with_path(path, embeddings_from_bytes(&read(path)?))
}

/// Relevant code ids per query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relevance {
    pub per_query: Vec<Vec<u32>>,
    /// Repeated lines that were skipped.
    pub duplicates: usize,
}

impl Relevance {
    /// Query `i` is relevant to code `i` only.
    pub fn identity(n: usize) -> Self {
        Self {
            per_query: (0..n as u32).map(|i| vec![i]).collect(),
            duplicates: 0,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, codes) in self.per_query.iter().enumerate() {
            for c in codes {
                out.push_str(&format!("{q}\t{c}\n"));
            }
        }
        out
    }
}

/// Parses `query_index<TAB>code_index` lines; blank lines are skipped.
pub fn parse_relevance(text: &str, queries: usize, codes: usize) -> Result<Relevance> {
    let mut sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); queries];
    let mut duplicates = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| Error::InvalidInput(format!("relevance line {}: {why}: {line:?}", ln + 1));
        let (q, c) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected two tab-separated indexes"))?;
        let q: usize = q.trim().parse().map_err(|_| bad("bad query index"))?;
        let c: usize = c.trim().parse().map_err(|_| bad("bad code index"))?;
        if q >= queries || c >= codes {
            return Err(bad(&format!("index out of range ({queries} queries, {codes} codes)")));
        }
        if !sets[q].insert(c as u32) {
            duplicates += 1;
        }
    }
    Ok(Relevance {
        per_query: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        duplicates,
    })
}

/// Reads a relevance file, or pairs query `i` with code `i` when none is given.
pub fn load_relevance(path: Option<&Path>, queries: usize, codes: usize) -> Result<Relevance> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_relevance(&text, queries, codes)
        }
        None if queries <= codes => Ok(Relevance::identity(queries)),
        None => Err(Error::InvalidInput(format!(
            "identity pairing needs at least as many codes ({codes}) as queries ({queries})"
        ))),
    }
}

/// Serializes a head at `f32` precision.
pub fn checkpoint_to_bytes<T: Scalar>(head: &HashHead<T>) -> Result<Vec<u8>> {
    let head: HashHead<f32> = head.cast();
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(to_u32(head.layers().len(), "layer count")?);
    for l in head.layers() {
        w.u32(to_u32(l.out_dim(), "rows")?);
        w.u32(to_u32(l.in_dim(), "cols")?);
    }
    for l in head.layers() {
        w.f32s(l.weight());
    }
    for l in head.layers() {
        w.f32s(l.bias());
    }
    Ok(w.buf)
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<HashHead<f32>> {
    let mut r = Reader::new(buf);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let at = r.offset();
    let layers = r.u32("layer count")? as usize;
    if layers == 0 || layers > r.remaining() / 8 {
        return Err(Error::Format {
            offset: at,
            reason: format!("implausible layer count {layers}"),
        });
    }
    let mut shapes = Vec::with_capacity(layers);
    for i in 0..layers {
        let at = r.offset();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        if rows == 0 || cols == 0 || shapes.last().is_some_and(|&(prev, _)| prev != cols) {
            return Err(Error::Format {
                offset: at,
                reason: format!("layer {i} shape {rows}x{cols} does not chain"),
            });
        }
        shapes.push((rows, cols));
    }
    let mut weights = Vec::with_capacity(layers);
    for &(rows, cols) in &shapes {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| r.error_at(r.offset() as usize, "layer too large"))?;
        weights.push(r.f32s(n, "weights")?);
    }
    let mut dense = Vec::with_capacity(layers);
    for (w, &(rows, cols)) in weights.into_iter().zip(&shapes) {
        let b = r.f32s(rows, "biases")?;
        dense.push(Dense::new(cols, rows, w, b)?);
    }
    r.finish()?;
    HashHead::from_layers(dense)
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, head: &HashHead<T>) -> Result<()> {
    atomic_write(path, &checkpoint_to_bytes(head)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<HashHead<f32>> {
    let path = path.as_ref();
    with_path(path, checkpoint_from_bytes(&read(path)?))
}

pub fn save_index(path: impl AsRef<Path>, index: &SegmentedIndex) -> Result<()> {
    atomic_write(path, &index.to_bytes()?)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<SegmentedIndex> {
    let path = path.as_ref();
    with_path(path, SegmentedIndex::from_bytes(&read(path)?))
}
