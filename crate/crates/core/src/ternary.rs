//! Ternary hash segments.
//!
//! A long continuous hash vector is cut into `S = B / k` segments of `k`
//! outputs. Each output becomes a trit: its sign, or `0` when the output is
//! among the `max_relaxed` least confident of its segment and its magnitude
//! does not exceed the threshold. A zero trit matches both binary values, so a
//! segment with `r` zeros stands for `2^r` concrete table keys.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Widest segment a [`BinaryKey`] can hold.
pub const MAX_SEGMENT_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Trit {
    Neg = -1,
    Zero = 0,
    Pos = 1,
}

impl Trit {
    /// Sign of a real with `sign(0) = -1`.
    #[inline]
    pub fn from_sign<T: Scalar>(v: T) -> Self {
        if v > T::zero() {
            Trit::Pos
        } else {
            Trit::Neg
        }
    }

    #[inline]
    pub fn value(self) -> i8 {
        self as i8
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Trit::Neg),
            0 => Some(Trit::Zero),
            1 => Some(Trit::Pos),
            _ => None,
        }
    }
}

impl std::ops::Mul for Trit {
    type Output = Trit;

    #[inline]
    fn mul(self, other: Trit) -> Trit {
        match self.value() * other.value() {
            1 => Trit::Pos,
            0 => Trit::Zero,
            _ => Trit::Neg,
        }
    }
}

impl fmt::Display for Trit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trit::Neg => "-",
            Trit::Zero => "0",
            Trit::Pos => "+",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub total_bits: usize,
    pub seg_len: usize,
    pub max_relaxed: usize,
    pub threshold: f64,
}

impl SegmentConfig {
    pub const DEFAULT_SEG_LEN: usize = 16;
    pub const DEFAULT_MAX_RELAXED: usize = 3;
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn new(total_bits: usize, seg_len: usize, max_relaxed: usize, threshold: f64) -> Result<Self> {
        let cfg = Self {
            total_bits,
            seg_len,
            max_relaxed,
            threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 16-bit segments, at most three relaxed bits, threshold 0.5.
    pub fn with_defaults(total_bits: usize) -> Result<Self> {
        Self::new(
            total_bits,
            Self::DEFAULT_SEG_LEN,
            Self::DEFAULT_MAX_RELAXED,
            Self::DEFAULT_THRESHOLD,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_bits == 0 || self.seg_len == 0 {
            return Err(Error::config("total bits and segment length must be positive"));
        }
        if self.seg_len > MAX_SEGMENT_LEN {
            return Err(Error::config(format!(
                "segment length {} exceeds {MAX_SEGMENT_LEN}",
                self.seg_len
            )));
        }
        if !self.total_bits.is_multiple_of(self.seg_len) {
            return Err(Error::config(format!(
                "{} bits are not divisible into segments of {}",
                self.total_bits, self.seg_len
            )));
        }
        if self.max_relaxed > self.seg_len {
            return Err(Error::config(format!(
                "cannot relax {} bits of a {}-bit segment",
                self.max_relaxed, self.seg_len
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    #[inline]
    pub fn num_segments(&self) -> usize {
        self.total_bits / self.seg_len
    }

    /// Same layout with relaxing switched off.
    pub fn without_relaxing(&self) -> Self {
        Self {
            max_relaxed: 0,
            ..*self
        }
    }
}

/// One concrete resolution of a segment: bit `j` set iff position `j` is `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryKey(pub u32);

impl BinaryKey {
    pub fn from_trits(bits: &[Trit]) -> Option<Self> {
        if bits.len() > MAX_SEGMENT_LEN || bits.contains(&Trit::Zero) {
            return None;
        }
        Some(Self(pack_positive(bits)))
    }

    pub fn to_trits(self, len: usize) -> Vec<Trit> {
        (0..len)
            .map(|j| if self.0 >> j & 1 == 1 { Trit::Pos } else { Trit::Neg })
            .collect()
    }
}

#[inline]
fn pack_positive(bits: &[Trit]) -> u32 {
    bits.iter()
        .enumerate()
        .fold(0u32, |acc, (j, &t)| if t == Trit::Pos { acc | 1 << j } else { acc })
}

/// A ternary code stored as `S` consecutive segments of `seg_len` trits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TernarySegments {
    seg_len: usize,
    trits: Vec<Trit>,
}

impl TernarySegments {
    pub fn new(seg_len: usize, trits: Vec<Trit>) -> Result<Self> {
        if seg_len == 0 || !trits.len().is_multiple_of(seg_len) {
            return Err(Error::shape(format!(
                "{} trits do not split into segments of {seg_len}",
                trits.len()
            )));
        }
        Ok(Self { seg_len, trits })
    }

    pub fn from_segments<S: AsRef<[Trit]>>(segments: &[S]) -> Result<Self> {
        let seg_len = segments.first().map_or(0, |s| s.as_ref().len());
        if segments.iter().any(|s| s.as_ref().len() != seg_len) {
            return Err(Error::shape("segments have unequal lengths"));
        }
        Self::new(
            seg_len,
            segments.iter().flat_map(|s| s.as_ref().iter().copied()).collect(),
        )
    }

    /// Convenience for tests and fixtures: `[[1, 0, -1], ...]`.
    pub fn from_i8(segments: &[&[i8]]) -> Result<Self> {
        let segs = segments
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&v| Trit::from_i8(v).ok_or_else(|| Error::InvalidInput(format!("{v} is not a trit"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_segments(&segs)
    }

    #[inline]
    pub fn seg_len(&self) -> usize {
        self.seg_len
    }

    #[inline]
    pub fn num_segments(&self) -> usize {
        self.trits.len() / self.seg_len
    }

    #[inline]
    pub fn segment(&self, i: usize) -> &[Trit] {
        &self.trits[i * self.seg_len..(i + 1) * self.seg_len]
    }

    pub fn segments(&self) -> impl Iterator<Item = &[Trit]> {
        self.trits.chunks_exact(self.seg_len)
    }

    pub fn trits(&self) -> &[Trit] {
        &self.trits
    }

    pub fn zero_count(&self, i: usize) -> usize {
        self.segment(i).iter().filter(|&&t| t == Trit::Zero).count()
    }

    /// Checks the layout against a configuration, including the relax budget.
    pub fn check(&self, cfg: &SegmentConfig) -> Result<()> {
        if self.seg_len != cfg.seg_len || self.trits.len() != cfg.total_bits {
            return Err(Error::shape(format!(
                "code has {} segments of {}, configuration wants {} of {}",
                self.num_segments(),
                self.seg_len,
                cfg.num_segments(),
                cfg.seg_len
            )));
        }
        for i in 0..self.num_segments() {
            let z = self.zero_count(i);
            if z > cfg.max_relaxed {
                return Err(Error::shape(format!(
                    "segment {i} has {z} relaxed bits, at most {} allowed",
                    cfg.max_relaxed
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TernarySegments {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.segments().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            for t in s {
                write!(f, "{t}")?;
            }
        }
        Ok(())
    }
}

/// Splits a continuous hash vector into consecutive segments.
pub fn segment<'a, T: Scalar>(o: &'a [T], cfg: &SegmentConfig) -> Result<Vec<&'a [T]>> {
    cfg.validate()?;
    if o.len() != cfg.total_bits {
        return Err(Error::shape(format!(
            "hash vector has {} outputs, configuration expects {}",
            o.len(),
            cfg.total_bits
        )));
    }
    Ok(o.chunks_exact(cfg.seg_len).collect())
}

/// Adaptive relaxing of one raw segment.
///
/// The `max_relaxed` outputs with the smallest magnitude (lower index first on
/// ties) become `0` if their magnitude is at most `threshold`; every other
/// output keeps its sign.
pub fn relax<T: Scalar>(raw: &[T], max_relaxed: usize, threshold: f64) -> Vec<Trit> {
    let mut out: Vec<Trit> = raw.iter().map(|&v| Trit::from_sign(v)).collect();
    if max_relaxed == 0 {
        return out;
    }
    let t = T::lit(threshold);
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        raw[a]
            .abs()
            .partial_cmp(&raw[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &j in order.iter().take(max_relaxed) {
        if raw[j].abs() <= t {
            out[j] = Trit::Zero;
        }
    }
    out
}

/// Segments and relaxes a whole hash vector.
pub fn encode<T: Scalar>(o: &[T], cfg: &SegmentConfig) -> Result<TernarySegments> {
    let segs = segment(o, cfg)?;
    let mut trits = Vec::with_capacity(cfg.total_bits);
    for s in segs {
        trits.extend(relax(s, cfg.max_relaxed, cfg.threshold));
    }
    TernarySegments::new(cfg.seg_len, trits)
}

/// All binary resolutions of a ternary segment.
///
/// Keys come out in lexicographic order of the resolved trit sequence, with
/// `-1` before `+1` and earlier positions more significant.
pub fn expand(seg: &[Trit]) -> Vec<BinaryKey> {
    assert!(seg.len() <= MAX_SEGMENT_LEN, "segment longer than a key");
    let base = pack_positive(seg);
    let zeros: Vec<usize> = seg
        .iter()
        .enumerate()
        .filter_map(|(j, &t)| (t == Trit::Zero).then_some(j))
        .collect();
    let r = zeros.len();
    (0u32..1 << r)
        .map(|m| {
            let mut key = base;
            for (i, &pos) in zeros.iter().enumerate() {
                if m >> (r - 1 - i) & 1 == 1 {
                    key |= 1 << pos;
                }
            }
            BinaryKey(key)
        })
        .collect()
}

/// Result of comparing two ternary segments position by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collision {
    /// Per-position products, each in `{-1, 0, +1}`.
    pub products: Vec<Trit>,
    /// Minimum product; `Neg` means some position disagrees.
    pub min: Trit,
}

impl Collision {
    #[inline]
    pub fn collides(&self) -> bool {
        self.min != Trit::Neg
    }
}

/// Compares two segments: they collide unless some position has product `-1`.
pub fn collide(a: &[Trit], b: &[Trit]) -> Result<Collision> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "segments of length {} and {} cannot be compared",
            a.len(),
            b.len()
        )));
    }
    let products: Vec<Trit> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    let min = products.iter().copied().min().unwrap_or(Trit::Pos);
    Ok(Collision { products, min })
}

/// A segment as `(positive bits, known bits)` masks for word-level comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PackedSegment {
    pub positive: u32,
    pub known: u32,
}

impl PackedSegment {
    pub fn pack(seg: &[Trit]) -> Self {
        let mut known = 0u32;
        for (j, &t) in seg.iter().enumerate() {
            if t != Trit::Zero {
                known |= 1 << j;
            }
        }
        Self {
            positive: pack_positive(seg),
            known,
        }
    }

    /// Same predicate as [`collide`]: no position where both are known and differ.
    #[inline]
    pub fn collides(self, other: PackedSegment) -> bool {
        (self.positive ^ other.positive) & self.known & other.known == 0
    }
}
