//! Ranking metrics and alignment diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ternary::{TernarySegments, Trit};

/// Where the relevant items of one query landed in its returned list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingOutcome {
    /// Relevance of each returned position, in rank order.
    pub retrieved: Vec<bool>,
    /// Relevant items for the query, retrieved or not.
    pub total_relevant: usize,
}

impl RankingOutcome {
    pub fn from_ranking(ranked: &[u32], relevant: &[u32]) -> Self {
        let mut rel = relevant.to_vec();
        rel.sort_unstable();
        rel.dedup();
        Self {
            retrieved: ranked.iter().map(|id| rel.binary_search(id).is_ok()).collect(),
            total_relevant: rel.len(),
        }
    }

    /// One relevant item found at 1-based `rank`, or missed.
    pub fn single(rank: Option<usize>) -> Self {
        let retrieved = match rank {
            Some(r) if r >= 1 => {
                let mut v = vec![false; r];
                v[r - 1] = true;
                v
            }
            _ => Vec::new(),
        };
        Self {
            retrieved,
            total_relevant: 1,
        }
    }

    /// 1-based rank of the first relevant item.
    pub fn first_rank(&self) -> Option<usize> {
        self.retrieved.iter().position(|&r| r).map(|p| p + 1)
    }
}

fn nonempty(outcomes: &[RankingOutcome]) -> Result<()> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no queries to evaluate".into()));
    }
    Ok(())
}

pub fn recall_at_k(outcomes: &[RankingOutcome], k: usize) -> Result<f64> {
    nonempty(outcomes)?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.first_rank().is_some_and(|r| r <= k))
        .count();
    Ok(hits as f64 / outcomes.len() as f64)
}

pub fn mrr(outcomes: &[RankingOutcome]) -> Result<f64> {
    nonempty(outcomes)?;
    let sum: f64 = outcomes
        .iter()
        .map(|o| o.first_rank().map_or(0.0, |r| 1.0 / r as f64))
        .sum();
    Ok(sum / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ndcg {
    pub mean: f64,
    /// Queries with nothing relevant; each contributed 0.
    pub zero_relevance: Vec<usize>,
}

/// Normalized DCG with `log2(i + 1)` discounts, averaged over queries.
pub fn ndcg_at_k(outcomes: &[RankingOutcome], k: usize) -> Result<Ndcg> {
    nonempty(outcomes)?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let discount = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let mut zero_relevance = Vec::new();
    let mut sum = 0.0;
    for (q, o) in outcomes.iter().enumerate() {
        let ideal_hits = o.total_relevant.max(o.retrieved.iter().filter(|&&r| r).count());
        if ideal_hits == 0 {
            zero_relevance.push(q);
            continue;
        }
        let dcg: f64 = o
            .retrieved
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| discount(i + 1))
            .sum();
        let idcg: f64 = (1..=ideal_hits.min(k)).map(discount).sum();
        sum += dcg / idcg;
    }
    Ok(Ndcg {
        mean: sum / outcomes.len() as f64,
        zero_relevance,
    })
}

/// Share of singly-relaxed bits that sat on a position where the two
/// initial binary codes disagreed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairRatio {
    /// Bits relaxed by the code side only.
    pub code: Option<f64>,
    /// Bits relaxed by the query side only.
    pub query: Option<f64>,
    pub combined: Option<f64>,
}

/// `initial_*` are `+1/-1` codes before alignment; `*_ternary` the relaxed codes after.
pub fn repair_ratio(
    initial_code: &[Vec<i8>],
    initial_query: &[Vec<i8>],
    code_ternary: &[TernarySegments],
    query_ternary: &[TernarySegments],
) -> Result<RepairRatio> {
    let n = initial_code.len();
    if initial_query.len() != n || code_ternary.len() != n || query_ternary.len() != n {
        return Err(Error::shape("repair ratio inputs disagree on pair count"));
    }
    // (relaxed, of which misaligned) per side
    let mut code = (0usize, 0usize);
    let mut query = (0usize, 0usize);
    for p in 0..n {
        let (ic, iq) = (&initial_code[p], &initial_query[p]);
        let (tc, tq) = (code_ternary[p].trits(), query_ternary[p].trits());
        let b = ic.len();
        if iq.len() != b || tc.len() != b || tq.len() != b {
            return Err(Error::shape(format!("pair {p}: code lengths disagree")));
        }
        for j in 0..b {
            let cz = tc[j] == Trit::Zero;
            let qz = tq[j] == Trit::Zero;
            let side = match (cz, qz) {
                (true, false) => &mut code,
                (false, true) => &mut query,
                _ => continue,
            };
            side.0 += 1;
            if ic[j] != iq[j] {
                side.1 += 1;
            }
        }
    }
    let ratio = |(d, m): (usize, usize)| (d > 0).then(|| m as f64 / d as f64);
    Ok(RepairRatio {
        code: ratio(code),
        query: ratio(query),
        combined: ratio((code.0 + query.0, code.1 + query.1)),
    })
}

/// Mean number of positions per segment relaxed by both sides.
pub fn dual_relaxed_count(code_ternary: &[TernarySegments], query_ternary: &[TernarySegments]) -> Result<f64> {
    if code_ternary.len() != query_ternary.len() {
        return Err(Error::shape("code and query counts differ"));
    }
    let mut both = 0usize;
    let mut segments = 0usize;
    for (p, (c, q)) in code_ternary.iter().zip(query_ternary).enumerate() {
        if c.seg_len() != q.seg_len() || c.trits().len() != q.trits().len() {
            return Err(Error::shape(format!("pair {p}: segment shapes differ")));
        }
        segments += c.num_segments();
        both += c
            .trits()
            .iter()
            .zip(q.trits())
            .filter(|&(&a, &b)| a == Trit::Zero && b == Trit::Zero)
            .count();
    }
    if segments == 0 {
        return Ok(0.0);
    }
    Ok(both as f64 / segments as f64)
}

/// Per-query `|A ∩ B| / |B|`, averaged; a query with empty `B` scores 1.
pub fn faithfulness(table_sets: &[Vec<u32>], hamming_sets: &[Vec<u32>]) -> Result<f64> {
    if table_sets.len() != hamming_sets.len() {
        return Err(Error::shape("recall set counts differ"));
    }
    if table_sets.is_empty() {
        return Err(Error::InvalidInput("no queries to evaluate".into()));
    }
    let mut sum = 0.0;
    for (a, b) in table_sets.iter().zip(hamming_sets) {
        let mut b = b.clone();
        b.sort_unstable();
        b.dedup();
        if b.is_empty() {
            sum += 1.0;
            continue;
        }
        let mut a = a.clone();
        a.sort_unstable();
        a.dedup();
        let shared = b.iter().filter(|x| a.binary_search(x).is_ok()).count();
        sum += shared as f64 / b.len() as f64;
    }
    Ok(sum / table_sets.len() as f64)
}
