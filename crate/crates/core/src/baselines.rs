//! Comparison engines: linear Hamming scan, random-hyperplane LSH, and the
//! dense re-rank shared by every recall method.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{RecallResult, Searcher, SegmentedIndex};
use crate::linalg::{affine_nt, cosine, dot, Matrix};
use crate::pretrain::Similarity;
use crate::scalar::Scalar;
use crate::ternary::SegmentConfig;

/// `bits` binary digits packed into 64-bit words, bit `j` in word `j / 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedBinaryCode {
    bits: usize,
    words: Vec<u64>,
}

impl PackedBinaryCode {
    pub fn from_bools(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        Self {
            bits: bits.len(),
            words,
        }
    }

    /// Bit `j` set iff `o[j] > 0`.
    pub fn from_signs<T: Scalar>(o: &[T]) -> Self {
        let b: Vec<bool> = o.iter().map(|&v| v > T::zero()).collect();
        Self::from_bools(&b)
    }

    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != bits.div_ceil(64) {
            return Err(Error::shape(format!("{} words cannot hold {bits} bits", words.len())));
        }
        if !bits.is_multiple_of(64) && words.last().is_some_and(|&w| w >> (bits % 64) != 0) {
            return Err(Error::InvalidInput("padding bits must be zero".into()));
        }
        Ok(Self { bits, words })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn distance(&self, other: &PackedBinaryCode) -> Result<u32> {
        if self.bits != other.bits {
            return Err(Error::shape(format!("{} vs {} bits", self.bits, other.bits)));
        }
        Ok(hamming(&self.words, &other.words))
    }
}

#[inline]
fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// A corpus of equal-length codes stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HammingCorpus {
    bits: usize,
    stride: usize,
    words: Vec<u64>,
}

impl HammingCorpus {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            stride: bits.div_ceil(64),
            words: Vec::new(),
        }
    }

    pub fn from_codes(bits: usize, codes: &[PackedBinaryCode]) -> Result<Self> {
        let mut c = Self::new(bits);
        for code in codes {
            c.push(code)?;
        }
        Ok(c)
    }

    /// Sign codes of every row of a matrix of head outputs.
    pub fn from_outputs<T: Scalar>(outputs: &Matrix<T>) -> Self {
        let mut c = Self::new(outputs.cols());
        for r in outputs.iter_rows() {
            c.words.extend_from_slice(PackedBinaryCode::from_signs(r).words());
        }
        c
    }

    pub fn push(&mut self, code: &PackedBinaryCode) -> Result<()> {
        if code.bits != self.bits {
            return Err(Error::shape(format!(
                "{}-bit code in a {}-bit corpus",
                code.bits, self.bits
            )));
        }
        self.words.extend_from_slice(&code.words);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.words.len().checked_div(self.stride).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, id: usize) -> PackedBinaryCode {
        PackedBinaryCode {
            bits: self.bits,
            words: self.words[id * self.stride..(id + 1) * self.stride].to_vec(),
        }
    }

    /// Distance-then-id sort keys for every item.
    fn keys(&self, query: &PackedBinaryCode) -> Result<Vec<u64>> {
        if query.bits != self.bits {
            return Err(Error::shape(format!(
                "{}-bit query against a {}-bit corpus",
                query.bits, self.bits
            )));
        }
        if self.stride == 0 {
            return Ok(Vec::new());
        }
        Ok(self
            .words
            .chunks_exact(self.stride)
            .enumerate()
            .map(|(id, w)| (u64::from(hamming(w, &query.words)) << 32) | id as u64)
            .collect())
    }
}

fn unpack(keys: &[u64]) -> Vec<(u32, u32)> {
    keys.iter().map(|&k| (k as u32, (k >> 32) as u32)).collect()
}

/// Ranks the whole corpus by Hamming distance, ties by id, and keeps `top_n`.
///
/// Returns `(id, distance)` pairs. Every item is scored and fully sorted.
pub fn hamming_scan(query: &PackedBinaryCode, corpus: &HammingCorpus, top_n: usize) -> Result<Vec<(u32, u32)>> {
    let mut keys = corpus.keys(query)?;
    keys.sort_unstable();
    keys.truncate(top_n);
    Ok(unpack(&keys))
}

/// Same result as [`hamming_scan`] using partial selection instead of a full sort.
pub fn hamming_scan_select(query: &PackedBinaryCode, corpus: &HammingCorpus, top_n: usize) -> Result<Vec<(u32, u32)>> {
    let mut keys = corpus.keys(query)?;
    if top_n < keys.len() {
        keys.select_nth_unstable(top_n);
        keys.truncate(top_n);
    }
    keys.sort_unstable();
    Ok(unpack(&keys))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshConfig {
    pub num_tables: usize,
    pub bits_per_table: usize,
    pub seed: u64,
}

impl LshConfig {
    pub const DEFAULT_BITS_PER_TABLE: usize = 8;

    /// As many tables as a segmented index over `code_bits`-bit codes has.
    pub fn matching(code_bits: usize, seed: u64) -> Self {
        Self {
            num_tables: (code_bits / Self::DEFAULT_BITS_PER_TABLE).max(1),
            bits_per_table: Self::DEFAULT_BITS_PER_TABLE,
            seed,
        }
    }

    fn segment_config(&self) -> Result<SegmentConfig> {
        if self.num_tables == 0 || self.bits_per_table == 0 {
            return Err(Error::config("LSH needs at least one table of at least one bit"));
        }
        SegmentConfig::new(self.num_tables * self.bits_per_table, self.bits_per_table, 0, 0.0)
    }
}

/// Multi-table LSH over random Gaussian hyperplanes.
#[derive(Debug, Clone)]
pub struct LshIndex<T> {
    cfg: LshConfig,
    /// `num_tables * bits_per_table` rows, one hyperplane each.
    hyperplanes: Matrix<T>,
    index: SegmentedIndex,
}

impl<T: Scalar> LshIndex<T> {
    /// Draws unit-Gaussian hyperplanes from `cfg.seed` and indexes `embeddings`.
    pub fn build(embeddings: &Matrix<T>, cfg: &LshConfig) -> Result<Self> {
        let total = cfg.segment_config()?.total_bits;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let data: Vec<T> = (0..total * embeddings.cols())
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                T::lit(v)
            })
            .collect();
        let planes = Matrix::from_vec(total, embeddings.cols(), data)?;
        Self::with_hyperplanes(embeddings, planes, cfg)
    }

    pub fn with_hyperplanes(embeddings: &Matrix<T>, hyperplanes: Matrix<T>, cfg: &LshConfig) -> Result<Self> {
        let seg = cfg.segment_config()?;
        if hyperplanes.rows() != seg.total_bits {
            return Err(Error::shape(format!(
                "{} hyperplanes for {} tables of {} bits",
                hyperplanes.rows(),
                cfg.num_tables,
                cfg.bits_per_table
            )));
        }
        if embeddings.rows() > 0 && embeddings.cols() != hyperplanes.cols() {
            return Err(Error::shape(format!(
                "embeddings of dimension {} against hyperplanes of dimension {}",
                embeddings.cols(),
                hyperplanes.cols()
            )));
        }
        let keys = Self::keys_for(&hyperplanes, cfg, embeddings);
        let index = SegmentedIndex::from_binary_keys(&keys, &seg)?;
        Ok(Self {
            cfg: *cfg,
            hyperplanes,
            index,
        })
    }

    fn keys_for(planes: &Matrix<T>, cfg: &LshConfig, x: &Matrix<T>) -> Vec<Vec<u32>> {
        let mut proj = Matrix::zeros(x.rows(), planes.rows());
        let bias = vec![T::zero(); planes.rows()];
        affine_nt(x, planes.as_slice(), &bias, &mut proj);
        proj.iter_rows()
            .map(|p| {
                p.chunks_exact(cfg.bits_per_table)
                    .map(|c| {
                        c.iter()
                            .enumerate()
                            .fold(0u32, |k, (j, &v)| if v > T::zero() { k | 1 << j } else { k })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn config(&self) -> &LshConfig {
        &self.cfg
    }

    pub fn index(&self) -> &SegmentedIndex {
        &self.index
    }

    pub fn hyperplanes(&self) -> &Matrix<T> {
        &self.hyperplanes
    }

    /// One key per table for a single embedding.
    pub fn keys(&self, x: &[T]) -> Result<Vec<u32>> {
        if x.len() != self.hyperplanes.cols() {
            return Err(Error::shape(format!(
                "query of dimension {} against hyperplanes of dimension {}",
                x.len(),
                self.hyperplanes.cols()
            )));
        }
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(Self::keys_for(&self.hyperplanes, &self.cfg, &m).remove(0))
    }

    pub fn recall_with(&self, searcher: &mut Searcher<'_>, x: &[T], max_n: usize) -> Result<RecallResult> {
        let keys: Vec<Vec<u32>> = self.keys(x)?.into_iter().map(|k| vec![k]).collect();
        searcher.recall_keys(&keys, max_n)
    }

    pub fn recall(&self, x: &[T], max_n: usize) -> Result<RecallResult> {
        self.recall_with(&mut Searcher::new(&self.index), x, max_n)
    }
}

/// Orders candidates by similarity to the query, highest first, ties by id.
///
/// Returns `(id, similarity)`; only the given ids are ever returned.
pub fn dense_rerank<T: Scalar>(
    query: &[T],
    candidates: &[u32],
    store: &Matrix<T>,
    metric: Similarity,
) -> Result<Vec<(u32, T)>> {
    if store.rows() > 0 && query.len() != store.cols() {
        return Err(Error::shape(format!(
            "query of dimension {} against a store of dimension {}",
            query.len(),
            store.cols()
        )));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &id in candidates {
        if id as usize >= store.rows() {
            return Err(Error::InvalidInput(format!(
                "candidate {id} not in a store of {} items",
                store.rows()
            )));
        }
        let v = store.row(id as usize);
        let s = match metric {
            Similarity::Cosine => cosine(query, v),
            Similarity::Dot => dot(query, v),
        };
        scored.push((id, s));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(scored)
}
