//! End-to-end wiring: ablation modes, encoding, indexing and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{encode_rows, forward_all, positive_collision_rate, Side, SideRelax};
use crate::baselines::{dense_rerank, hamming_scan, HammingCorpus, PackedBinaryCode};
use crate::error::{Error, Result};
use crate::hashnet::{default_dims, HashHead};
use crate::index::{Searcher, SegmentedIndex, DEFAULT_MAX_CANDIDATES};
use crate::linalg::{cosine, dot, Matrix};
use crate::metrics::{
    dual_relaxed_count, faithfulness, mrr, ndcg_at_k, recall_at_k, repair_ratio, RankingOutcome, RepairRatio,
};
use crate::pretrain::{discretize, Similarity};
use crate::storage::Relevance;
use crate::ternary::{SegmentConfig, TernarySegments};

/// Which heads relax their least confident bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelaxMode {
    /// `NR`: neither side.
    None,
    /// `SR`: the code side only.
    Single,
    /// `BR`: both sides.
    Both,
}

impl RelaxMode {
    pub fn side_relax(self) -> SideRelax {
        match self {
            RelaxMode::None => SideRelax {
                code: false,
                query: false,
            },
            RelaxMode::Single => SideRelax {
                code: true,
                query: false,
            },
            RelaxMode::Both => SideRelax::BOTH,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            RelaxMode::None => "NR",
            RelaxMode::Single => "SR",
            RelaxMode::Both => "BR",
        }
    }
}

/// One cell of the ablation grid: iterative training on/off by relax mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub iterative: bool,
    pub relax: RelaxMode,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::new(false, RelaxMode::None),
        Ablation::new(false, RelaxMode::Single),
        Ablation::new(false, RelaxMode::Both),
        Ablation::new(true, RelaxMode::None),
        Ablation::new(true, RelaxMode::Single),
        Ablation::new(true, RelaxMode::Both),
    ];

    pub const fn new(iterative: bool, relax: RelaxMode) -> Self {
        Self { iterative, relax }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::new(true, RelaxMode::Both)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", if self.iterative { "A" } else { "NA" }, self.relax.tag())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.to_string() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown mode {s:?}; expected one of A_BR, A_NR, A_SR, NA_BR, NA_NR, NA_SR"
            ))
        })
    }
}

impl Serialize for Ablation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ablation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Freshly initialized code and query heads with independent seeds.
pub fn init_heads(
    code_dim: usize,
    query_dim: usize,
    hidden: usize,
    bits: usize,
    seed: u64,
) -> Result<(HashHead<f64>, HashHead<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b): (u64, u64) = (rng.random(), rng.random());
    Ok((
        HashHead::new(&default_dims(code_dim, hidden, bits), a)?,
        HashHead::new(&default_dims(query_dim, hidden, bits), b)?,
    ))
}

/// Trained heads plus the encoding settings used at inference.
#[derive(Debug, Clone)]
pub struct RetrievalSystem {
    pub code_head: HashHead<f32>,
    pub query_head: HashHead<f32>,
    pub seg: SegmentConfig,
    pub relax: SideRelax,
}

impl RetrievalSystem {
    pub fn new(
        code_head: HashHead<f32>,
        query_head: HashHead<f32>,
        seg: SegmentConfig,
        relax: SideRelax,
    ) -> Result<Self> {
        seg.validate()?;
        if code_head.bits() != seg.total_bits || query_head.bits() != seg.total_bits {
            return Err(Error::shape(format!(
                "heads emit {}/{} bits, segment configuration expects {}",
                code_head.bits(),
                query_head.bits(),
                seg.total_bits
            )));
        }
        Ok(Self {
            code_head,
            query_head,
            seg,
            relax,
        })
    }

    fn check_dim(head: &HashHead<f32>, emb: &Matrix<f32>, what: &str) -> Result<()> {
        if emb.cols() != head.input_dim() {
            return Err(Error::shape(format!(
                "{what} embeddings have dimension {}, the head expects {}",
                emb.cols(),
                head.input_dim()
            )));
        }
        Ok(())
    }

    pub fn code_outputs(&self, emb: &Matrix<f32>) -> Result<Matrix<f32>> {
        Self::check_dim(&self.code_head, emb, "code")?;
        forward_all(&self.code_head, emb)
    }

    pub fn query_outputs(&self, emb: &Matrix<f32>) -> Result<Matrix<f32>> {
        Self::check_dim(&self.query_head, emb, "query")?;
        forward_all(&self.query_head, emb)
    }

    pub fn encode_codes(&self, emb: &Matrix<f32>) -> Result<Vec<TernarySegments>> {
        encode_rows(&self.code_outputs(emb)?, &self.relax.config(Side::Code, &self.seg))
    }

    pub fn encode_queries(&self, emb: &Matrix<f32>) -> Result<Vec<TernarySegments>> {
        encode_rows(&self.query_outputs(emb)?, &self.relax.config(Side::Query, &self.seg))
    }

    pub fn build_index(&self, code_emb: &Matrix<f32>) -> Result<SegmentedIndex> {
        SegmentedIndex::build(&self.encode_codes(code_emb)?, &self.relax.config(Side::Code, &self.seg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_candidates: usize,
    pub similarity: Similarity,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_candidates: DEFAULT_MAX_CANDIDATES,
            similarity: Similarity::Cosine,
        }
    }
}

/// Metrics of one evaluation run; every value is a mean over queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub codes: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mrr: f64,
    pub ndcg_at_10: f64,
    /// MRR of ranking every code by dense similarity.
    pub dense_mrr: f64,
    /// `mrr / dense_mrr`.
    pub mrr_retention: f64,
    /// Candidates returned by table recall.
    pub mean_candidates: f64,
    /// Share of queries whose candidates include a relevant code.
    pub candidate_recall: f64,
    pub positive_collision_rate: f64,
    pub dual_relaxed_count: f64,
    /// Present when reference heads are given.
    pub reference: Option<ReferenceMetrics>,
}

/// Comparison against Hamming-scan recall with the reference (unaligned) heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    /// MRR of Hamming top-n recall followed by the same dense re-rank.
    pub hamming_mrr: f64,
    /// Per-query share of the Hamming candidates that table recall also returns.
    pub faithfulness: f64,
    /// Share of relevant codes recalled by the Hamming scan that table recall also returns.
    pub relevant_faithfulness: Option<f64>,
    pub repair_ratio: RepairRatio,
}

/// Per-query detail for optional CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query: usize,
    pub candidates: usize,
    pub first_rank: Option<usize>,
    pub dense_first_rank: Option<usize>,
}

pub fn query_rows_csv(rows: &[QueryRow]) -> String {
    let mut out = String::from("query,candidates,first_rank,dense_first_rank\n");
    let opt = |v: Option<usize>| v.map_or(String::new(), |r| r.to_string());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.query,
            r.candidates,
            opt(r.first_rank),
            opt(r.dense_first_rank)
        ));
    }
    out
}

fn similarity(metric: Similarity, a: &[f32], b: &[f32]) -> f32 {
    match metric {
        Similarity::Cosine => cosine(a, b),
        Similarity::Dot => dot(a, b),
    }
}

/// Ranks of the relevant codes when every code is sorted by similarity.
fn dense_outcome(q: &[f32], codes: &Matrix<f32>, relevant: &[u32], metric: Similarity) -> RankingOutcome {
    let scores: Vec<f32> = codes.iter_rows().map(|c| similarity(metric, q, c)).collect();
    let mut ranks: Vec<usize> = relevant
        .iter()
        .map(|&r| {
            let s = scores[r as usize];
            1 + scores
                .iter()
                .enumerate()
                .filter(|&(i, &v)| v > s || (v == s && (i as u32) < r))
                .count()
        })
        .collect();
    ranks.sort_unstable();
    let mut retrieved = vec![false; ranks.last().copied().unwrap_or(0)];
    for r in ranks {
        retrieved[r - 1] = true;
    }
    RankingOutcome {
        retrieved,
        total_relevant: relevant.len(),
    }
}

/// Heads whose sign codes feed the Hamming-scan comparison.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub code_head: &'a HashHead<f32>,
    pub query_head: &'a HashHead<f32>,
}

/// Evaluates table recall plus dense re-rank on a query set against a code corpus.
pub fn evaluate(
    system: &RetrievalSystem,
    code_emb: &Matrix<f32>,
    query_emb: &Matrix<f32>,
    relevance: &Relevance,
    reference: Option<Reference<'_>>,
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<QueryRow>)> {
    let nq = query_emb.rows();
    if relevance.per_query.len() != nq {
        return Err(Error::InvalidInput(format!(
            "relevance covers {} queries, {nq} given",
            relevance.per_query.len()
        )));
    }
    if nq == 0 || relevance.per_query.iter().all(|r| r.is_empty()) {
        return Err(Error::InvalidInput(
            "nothing to evaluate: no query has a relevant code".into(),
        ));
    }
    if let Some(&bad) = relevance
        .per_query
        .iter()
        .flatten()
        .find(|&&c| c as usize >= code_emb.rows())
    {
        return Err(Error::InvalidInput(format!(
            "relevant code {bad} outside a corpus of {}",
            code_emb.rows()
        )));
    }

    let code_out = system.code_outputs(code_emb)?;
    let query_out = system.query_outputs(query_emb)?;
    let code_seg = system.relax.config(Side::Code, &system.seg);
    let query_seg = system.relax.config(Side::Query, &system.seg);
    let codes = encode_rows(&code_out, &code_seg)?;
    let queries = encode_rows(&query_out, &query_seg)?;
    let index = SegmentedIndex::build(&codes, &code_seg)?;
    let mut searcher = Searcher::new(&index);

    let hamming = match reference {
        Some(r) => {
            let c = forward_all(r.code_head, code_emb)?;
            let q = forward_all(r.query_head, query_emb)?;
            Some((HammingCorpus::from_outputs(&c), q, c))
        }
        None => None,
    };

    let mut outcomes = Vec::with_capacity(nq);
    let mut dense = Vec::with_capacity(nq);
    let mut rows = Vec::with_capacity(nq);
    let mut total_candidates = 0usize;
    let mut with_relevant = 0usize;
    let mut table_sets = Vec::new();
    let mut hamming_sets = Vec::new();
    let mut hamming_outcomes = Vec::new();
    let (mut rel_in_hamming, mut rel_in_both) = (0usize, 0usize);

    for (qi, query_code) in queries.iter().enumerate() {
        let relevant = &relevance.per_query[qi];
        let q = query_emb.row(qi);
        let recalled = searcher.recall(query_code, opts.max_candidates)?.ids();
        total_candidates += recalled.len();
        if recalled.iter().any(|id| relevant.contains(id)) {
            with_relevant += 1;
        }
        let ranked: Vec<u32> = dense_rerank(q, &recalled, code_emb, opts.similarity)?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let outcome = RankingOutcome::from_ranking(&ranked, relevant);
        let d = dense_outcome(q, code_emb, relevant, opts.similarity);
        rows.push(QueryRow {
            query: qi,
            candidates: recalled.len(),
            first_rank: outcome.first_rank(),
            dense_first_rank: d.first_rank(),
        });

        if let Some((corpus, hq, _)) = &hamming {
            let hits: Vec<u32> = hamming_scan(&PackedBinaryCode::from_signs(hq.row(qi)), corpus, opts.max_candidates)?
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            for r in relevant {
                if hits.contains(r) {
                    rel_in_hamming += 1;
                    if recalled.contains(r) {
                        rel_in_both += 1;
                    }
                }
            }
            let h_ranked: Vec<u32> = dense_rerank(q, &hits, code_emb, opts.similarity)?
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            hamming_outcomes.push(RankingOutcome::from_ranking(&h_ranked, relevant));
            hamming_sets.push(hits);
            table_sets.push(recalled);
        }
        outcomes.push(outcome);
        dense.push(d);
    }

    // matched pairs for the collision and relaxing diagnostics
    let pairs: Vec<(usize, usize)> = relevance
        .per_query
        .iter()
        .enumerate()
        .flat_map(|(q, cs)| cs.iter().map(move |&c| (q, c as usize)))
        .collect();
    let pair_codes: Vec<TernarySegments> = pairs.iter().map(|&(_, c)| codes[c].clone()).collect();
    let pair_queries: Vec<TernarySegments> = pairs.iter().map(|&(q, _)| queries[q].clone()).collect();

    let reference = match &hamming {
        Some((_, hq, hc)) => {
            let ic: Vec<Vec<i8>> = pairs.iter().map(|&(_, c)| discretize(hc.row(c))).collect();
            let iq: Vec<Vec<i8>> = pairs.iter().map(|&(q, _)| discretize(hq.row(q))).collect();
            Some(ReferenceMetrics {
                hamming_mrr: mrr(&hamming_outcomes)?,
                faithfulness: faithfulness(&table_sets, &hamming_sets)?,
                relevant_faithfulness: (rel_in_hamming > 0).then(|| rel_in_both as f64 / rel_in_hamming as f64),
                repair_ratio: repair_ratio(&ic, &iq, &pair_codes, &pair_queries)?,
            })
        }
        None => None,
    };

    let m = mrr(&outcomes)?;
    let dense_mrr = mrr(&dense)?;
    let report = MetricsReport {
        queries: nq,
        codes: code_emb.rows(),
        r_at_1: recall_at_k(&outcomes, 1)?,
        r_at_5: recall_at_k(&outcomes, 5)?,
        r_at_10: recall_at_k(&outcomes, 10)?,
        mrr: m,
        ndcg_at_10: ndcg_at_k(&outcomes, 10)?.mean,
        dense_mrr,
        mrr_retention: if dense_mrr > 0.0 { m / dense_mrr } else { 0.0 },
        mean_candidates: total_candidates as f64 / nq as f64,
        candidate_recall: with_relevant as f64 / nq as f64,
        positive_collision_rate: positive_collision_rate(&pair_codes, &pair_queries),
        dual_relaxed_count: dual_relaxed_count(&pair_codes, &pair_queries)?,
        reference,
    };
    Ok((report, rows))
}
