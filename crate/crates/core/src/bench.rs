//! Recall-step timing: segmented tables against a linear Hamming scan and LSH.
//!
//! Corpus items are synthetic head outputs `tanh(z)` with `z` standard normal;
//! queries perturb the latent of a random corpus item. Only the recall call is
//! timed: encoding, packing and index construction happen beforehand.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{hamming_scan, HammingCorpus, LshConfig, LshIndex, PackedBinaryCode};
use crate::error::{Error, Result};
use crate::index::{Searcher, SegmentedIndex, DEFAULT_MAX_CANDIDATES};
use crate::linalg::Matrix;
use crate::ternary::{encode, SegmentConfig, TernarySegments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub bits: Vec<usize>,
    pub queries: usize,
    pub top_n: usize,
    /// Standard deviation of the query perturbation in latent space.
    pub query_noise: f64,
    pub include_lsh: bool,
    /// Timed passes over the query set; the median pass is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![50_000, 100_000, 200_000, 400_000],
            bits: vec![128, 256],
            queries: 200,
            top_n: DEFAULT_MAX_CANDIDATES,
            query_noise: 0.3,
            include_lsh: true,
            repeats: 9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Table,
    HammingScan,
    Lsh,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Table => "table",
            Method::HammingScan => "hamming_scan",
            Method::Lsh => "lsh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub method: Method,
    pub bits: usize,
    /// Mean recall time per query, from the median timed pass.
    pub seconds: f64,
    /// `1 - t / t_scan` for the same size and width; absent for the scan itself.
    pub reduction_pct: Option<f64>,
    pub mean_candidates: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("size,method,bits,seconds,reduction%\n");
    for r in rows {
        let red = r.reduction_pct.map_or(String::new(), |v| format!("{v:.2}"));
        out.push_str(&format!(
            "{},{},{},{:.9},{}\n",
            r.size,
            r.method.name(),
            r.bits,
            r.seconds,
            red
        ));
    }
    out
}

struct Workload {
    codes: Vec<TernarySegments>,
    queries: Vec<TernarySegments>,
    corpus: HammingCorpus,
    packed_queries: Vec<PackedBinaryCode>,
    latents: Matrix<f32>,
    query_latents: Matrix<f32>,
}

fn workload(size: usize, bits: usize, cfg: &BenchConfig, seg: &SegmentConfig) -> Result<Workload> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (size as u64).rotate_left(20) ^ bits as u64);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut latents = Vec::with_capacity(size * bits);
    let mut codes = Vec::with_capacity(size);
    let mut corpus = HammingCorpus::new(bits);
    let mut out = vec![0.0f64; bits];
    for _ in 0..size {
        for o in out.iter_mut() {
            let z = normal(&mut rng);
            latents.push(z as f32);
            *o = z.tanh();
        }
        codes.push(encode(&out, seg)?);
        corpus.push(&PackedBinaryCode::from_signs(&out))?;
    }
    let latents = Matrix::from_vec(size, bits, latents)?;

    let mut queries = Vec::with_capacity(cfg.queries);
    let mut packed_queries = Vec::with_capacity(cfg.queries);
    let mut q_lat = Vec::with_capacity(cfg.queries * bits);
    for _ in 0..cfg.queries {
        let src = rng.random_range(0..size);
        for (o, &z) in out.iter_mut().zip(latents.row(src)) {
            let v = z as f64 + cfg.query_noise * normal(&mut rng);
            q_lat.push(v as f32);
            *o = v.tanh();
        }
        queries.push(encode(&out, seg)?);
        packed_queries.push(PackedBinaryCode::from_signs(&out));
    }
    Ok(Workload {
        codes,
        queries,
        corpus,
        packed_queries,
        latents,
        query_latents: Matrix::from_vec(cfg.queries, bits, q_lat)?,
    })
}

/// Per-query, per-table LSH keys.
type LshKeys = Vec<Vec<Vec<u32>>>;

/// Workload with every structure built; only what the timed passes touch.
struct Prepared {
    size: usize,
    corpus: HammingCorpus,
    packed_queries: Vec<PackedBinaryCode>,
    queries: Vec<TernarySegments>,
    index: SegmentedIndex,
    lsh: Option<(LshIndex<f32>, LshKeys)>,
}

fn prepare(size: usize, bits: usize, cfg: &BenchConfig, seg: &SegmentConfig) -> Result<Prepared> {
    if size == 0 {
        return Err(Error::config("benchmark sizes must be positive"));
    }
    let w = workload(size, bits, cfg, seg)?;
    let index = SegmentedIndex::build(&w.codes, seg)?;
    let lsh = if cfg.include_lsh {
        let lsh = LshIndex::build(&w.latents, &LshConfig::matching(bits, cfg.seed))?;
        let keys = w
            .query_latents
            .iter_rows()
            .map(|x| lsh.keys(x).map(|k| k.into_iter().map(|v| vec![v]).collect()))
            .collect::<Result<_>>()?;
        Some((lsh, keys))
    } else {
        None
    };
    Ok(Prepared {
        size,
        corpus: w.corpus,
        packed_queries: w.packed_queries,
        queries: w.queries,
        index,
        lsh,
    })
}

/// Runs every size and width; `progress` receives each row once its width is done.
///
/// Per width, all sizes are built first. The timed passes then run in
/// `cfg.repeats` rounds, each visiting every size and method once, and the
/// median pass per cell is reported. Interleaving spreads machine noise evenly
/// over the sizes.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    if cfg.sizes.is_empty() || cfg.bits.is_empty() || cfg.queries == 0 || cfg.repeats == 0 {
        return Err(Error::config(
            "benchmark needs sizes, widths, at least one query and one repeat",
        ));
    }
    let mut methods = vec![Method::HammingScan, Method::Table];
    if cfg.include_lsh {
        methods.push(Method::Lsh);
    }
    let mut rows = Vec::new();
    for &bits in &cfg.bits {
        let seg = SegmentConfig::with_defaults(bits)?;
        let prepared = cfg
            .sizes
            .iter()
            .map(|&size| prepare(size, bits, cfg, &seg))
            .collect::<Result<Vec<_>>>()?;
        let mut searchers: Vec<(Searcher, Option<Searcher>)> = prepared
            .iter()
            .map(|p| {
                (
                    Searcher::new(&p.index),
                    p.lsh.as_ref().map(|(l, _)| Searcher::new(l.index())),
                )
            })
            .collect();
        let mut times = vec![vec![Vec::with_capacity(cfg.repeats); methods.len()]; prepared.len()];
        let mut found = vec![vec![0usize; methods.len()]; prepared.len()];

        for _ in 0..cfg.repeats {
            for (i, (p, (table, lsh))) in prepared.iter().zip(searchers.iter_mut()).enumerate() {
                for (j, &method) in methods.iter().enumerate() {
                    let start = Instant::now();
                    let mut n = 0;
                    match method {
                        Method::HammingScan => {
                            for q in &p.packed_queries {
                                n += hamming_scan(q, &p.corpus, cfg.top_n)?.len();
                            }
                        }
                        Method::Table => {
                            for q in &p.queries {
                                n += table.recall(q, cfg.top_n)?.candidates.len();
                            }
                        }
                        Method::Lsh => {
                            let (searcher, (_, keys)) = lsh.as_mut().zip(p.lsh.as_ref()).expect("lsh prepared");
                            for k in keys {
                                n += searcher.recall_keys(k, cfg.top_n)?.candidates.len();
                            }
                        }
                    }
                    times[i][j].push(start.elapsed().as_secs_f64() / cfg.queries as f64);
                    found[i][j] = n;
                }
            }
        }

        for (i, p) in prepared.iter().enumerate() {
            let median: Vec<f64> = times[i].iter_mut().map(|t| median(t)).collect();
            for (j, &method) in methods.iter().enumerate() {
                let row = BenchRow {
                    size: p.size,
                    method,
                    bits,
                    seconds: median[j],
                    reduction_pct: (method != Method::HammingScan).then(|| 100.0 * (1.0 - median[j] / median[0])),
                    mean_candidates: found[i][j] as f64 / cfg.queries as f64,
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_produces_every_row() {
        let cfg = BenchConfig {
            sizes: vec![500, 1000],
            bits: vec![32],
            queries: 5,
            ..BenchConfig::default()
        };
        let mut seen = 0;
        let rows = run_bench(&cfg, |_| seen += 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(seen, 6);
        let csv = bench_csv(&rows);
        assert!(csv.starts_with("size,method,bits,seconds,reduction%\n"));
        assert_eq!(csv.lines().count(), 7);
        for r in &rows {
            if let Some(red) = r.reduction_pct {
                let scan = rows
                    .iter()
                    .find(|s| s.method == Method::HammingScan && s.size == r.size)
                    .unwrap()
                    .seconds;
                assert!((red - 100.0 * (1.0 - r.seconds / scan)).abs() < 1e-9);
            }
        }
        // the scan always returns a full page
        assert!(rows
            .iter()
            .filter(|r| r.method == Method::HammingScan)
            .all(|r| r.mean_candidates == 300.0));
    }

    #[test]
    fn r2_of_a_line_is_one() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((linear_r2(&x, &y) - 1.0).abs() < 1e-12);
        assert!(linear_r2(&x, &[1.0, -1.0, 1.0, -1.0]) < 0.5);
    }
}
