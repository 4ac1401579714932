//! Initial hashing generation: a contrastive loss over paired code/query
//! outputs, trained jointly on both heads, followed by sign discretization.
//!
//! The loss is the generic form
//!
//! ```text
//! L = sum_i f(sim(c_i, q_i)) + kappa * E_{(j,k) ~ P_n}[ g(sim(c_j, q_k)) ]
//! ```
//!
//! instantiated with `f(s) = 1 - s`, `g(s) = max(0, s - margin)` and `P_n`
//! uniform over the ordered in-batch pairs `(j, k)` with `j != k`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashnet::{AdamWConfig, HashHead, OptimizerState};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Cosine,
    Dot,
}

/// How many negatives the expectation term is scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCount {
    /// `kappa = n (n - 1)`: the term becomes the sum over every in-batch negative.
    AllInBatch,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialLossConfig {
    pub margin: f64,
    pub negatives: NegativeCount,
    pub similarity: Similarity,
}

impl Default for InitialLossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            negatives: NegativeCount::AllInBatch,
            similarity: Similarity::Cosine,
        }
    }
}

/// Loss value with its gradient with respect to both output matrices.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub d_code: Matrix<T>,
    pub d_query: Matrix<T>,
}

/// Similarity of two rows and its partial derivatives.
fn sim_with_grad<T: Scalar>(c: &[T], q: &[T], kind: Similarity) -> (T, Vec<T>, Vec<T>) {
    match kind {
        Similarity::Dot => (dot(c, q), q.to_vec(), c.to_vec()),
        Similarity::Cosine => {
            let (nc, nq) = (norm(c), norm(q));
            if nc <= T::zero() || nq <= T::zero() {
                return (T::zero(), vec![T::zero(); c.len()], vec![T::zero(); q.len()]);
            }
            let s = dot(c, q) / (nc * nq);
            let inv = T::one() / (nc * nq);
            let dc = c
                .iter()
                .zip(q)
                .map(|(&ci, &qi)| qi * inv - s * ci / (nc * nc))
                .collect();
            let dq = q
                .iter()
                .zip(c)
                .map(|(&qi, &ci)| ci * inv - s * qi / (nq * nq))
                .collect();
            (s, dc, dq)
        }
    }
}

/// Generic contrastive hashing loss over `n` aligned rows.
pub fn initial_loss<T: Scalar>(
    code_out: &Matrix<T>,
    query_out: &Matrix<T>,
    cfg: &InitialLossConfig,
) -> Result<LossOutput<T>> {
    let n = code_out.rows();
    if query_out.rows() != n || query_out.cols() != code_out.cols() {
        return Err(Error::shape(format!(
            "code outputs are {}x{}, query outputs {}x{}",
            n,
            code_out.cols(),
            query_out.rows(),
            query_out.cols()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "a batch of {n} pair(s) has no in-batch negatives"
        )));
    }
    if !cfg.margin.is_finite() || cfg.margin < 0.0 {
        return Err(Error::config(format!("margin {} must be finite and >= 0", cfg.margin)));
    }
    let pairs = n * (n - 1);
    // weight applied to every individual negative
    let neg_weight = match cfg.negatives {
        NegativeCount::AllInBatch => T::one(),
        NegativeCount::Fixed(k) => {
            if k == 0 || k > n - 1 {
                return Err(Error::config(format!(
                    "negative count {k} must be in 1..={} for a batch of {n}",
                    n - 1
                )));
            }
            T::lit(k as f64 / pairs as f64)
        }
    };
    let margin = T::lit(cfg.margin);
    let bits = code_out.cols();
    let mut d_code = Matrix::zeros(n, bits);
    let mut d_query = Matrix::zeros(n, bits);
    let mut loss = T::zero();

    for j in 0..n {
        for k in 0..n {
            let (s, dc, dq) = sim_with_grad(code_out.row(j), query_out.row(k), cfg.similarity);
            let coeff = if j == k {
                // f(s) = 1 - s
                loss += T::one() - s;
                -T::one()
            } else if s > margin {
                // g(s) = max(0, s - margin)
                loss += neg_weight * (s - margin);
                neg_weight
            } else {
                continue;
            };
            for (g, v) in d_code.row_mut(j).iter_mut().zip(&dc) {
                *g += coeff * *v;
            }
            for (g, v) in d_query.row_mut(k).iter_mut().zip(&dq) {
                *g += coeff * *v;
            }
        }
    }
    Ok(LossOutput { loss, d_code, d_query })
}

/// `+1` where the output is strictly positive, `-1` otherwise.
pub fn discretize<T: Scalar>(o: &[T]) -> Vec<i8> {
    o.iter().map(|&v| if v > T::zero() { 1 } else { -1 }).collect()
}

/// Aligned code/query embeddings: row `i` of one pairs with row `i` of the other.
#[derive(Debug, Clone, Copy)]
pub struct PairBatch<'a, T> {
    pub code: &'a Matrix<T>,
    pub query: &'a Matrix<T>,
}

impl<'a, T: Scalar> PairBatch<'a, T> {
    pub fn new(code: &'a Matrix<T>, query: &'a Matrix<T>) -> Result<Self> {
        if code.rows() != query.rows() {
            return Err(Error::shape(format!(
                "{} code rows but {} query rows",
                code.rows(),
                query.rows()
            )));
        }
        if code.cols() != query.cols() {
            return Err(Error::shape(format!(
                "code dimension {} differs from query dimension {}",
                code.cols(),
                query.cols()
            )));
        }
        Ok(Self { code, query })
    }

    pub fn len(&self) -> usize {
        self.code.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.code.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub loss: InitialLossConfig,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Smallest decrease of the validation loss that counts as improvement.
    pub min_delta: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            loss: InitialLossConfig::default(),
            optimizer: AdamWConfig::default(),
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-pair training loss.
    pub loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based); `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl PretrainLog {
    /// `epoch,loss,val_loss`; an empty field when there is no validation set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_loss\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| format!("{v}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, val);
        }
        out
    }
}

pub(crate) fn batch_ranges(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(batch.max(1)).map(|s| s..(s + batch).min(n)).collect()
}

/// Mean per-pair loss of fixed heads over consecutive batches.
pub fn evaluate_initial_loss<T: Scalar>(
    code_head: &HashHead<T>,
    query_head: &HashHead<T>,
    data: PairBatch<'_, T>,
    cfg: &PretrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in batch_ranges(data.len(), cfg.batch_size) {
        if r.len() < 2 {
            continue;
        }
        let idx: Vec<usize> = r.collect();
        let c = code_head.forward_batch(&data.code.select_rows(&idx))?;
        let q = query_head.forward_batch(&data.query.select_rows(&idx))?;
        total += initial_loss(&c, &q, &cfg.loss)?.loss.as_f64();
        count += idx.len();
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Trains both heads jointly on the initial loss with seeded shuffling.
///
/// With a validation set, training stops once the validation loss fails to
/// improve by `min_delta` for `patience` epochs and the best parameters are
/// restored; without one the training loss plays that role.
pub fn pretrain_run<T: Scalar>(
    code_head: &mut HashHead<T>,
    query_head: &mut HashHead<T>,
    train: PairBatch<'_, T>,
    val: Option<PairBatch<'_, T>>,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainLog> {
    if cfg.batch_size < 2 {
        return Err(Error::config("batch size must be at least 2"));
    }
    if train.len() < 2 {
        return Err(Error::InvalidInput("need at least two training pairs".into()));
    }
    if code_head.bits() != query_head.bits() {
        return Err(Error::shape("code and query heads produce different bit counts"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut code_opt = OptimizerState::new(code_head, cfg.optimizer);
    let mut query_opt = OptimizerState::new(query_head, cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = PretrainLog::default();
    let mut best: Option<(f64, HashHead<T>, HashHead<T>)> = None;
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, r) in batch_ranges(order.len(), cfg.batch_size).into_iter().enumerate() {
            if r.len() < 2 {
                continue;
            }
            let idx = &order[r];
            let n = T::lit(idx.len() as f64);
            let ct = code_head.forward_trace(&train.code.select_rows(idx))?;
            let qt = query_head.forward_trace(&train.query.select_rows(idx))?;
            let mut out = initial_loss(ct.output(), qt.output(), &cfg.loss)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    path: format!("initial loss at epoch {epoch}, batch {b}"),
                });
            }
            total += out.loss.as_f64();
            seen += idx.len();
            out.d_code.as_mut_slice().iter_mut().for_each(|g| *g /= n);
            out.d_query.as_mut_slice().iter_mut().for_each(|g| *g /= n);
            let gc = code_head.backward_batch(&ct, &out.d_code)?;
            let gq = query_head.backward_batch(&qt, &out.d_query)?;
            code_opt.step(code_head, &gc)?;
            query_opt.step(query_head, &gq)?;
        }
        let loss = total / seen.max(1) as f64;
        let val_loss = match val {
            Some(v) => Some(evaluate_initial_loss(code_head, query_head, v, cfg)?),
            None => None,
        };
        log.epochs.push(EpochRecord { epoch, loss, val_loss });

        let monitored = val_loss.unwrap_or(loss);
        if !monitored.is_finite() {
            return Err(Error::NonFinite {
                path: format!("monitored loss at epoch {epoch}"),
            });
        }
        let improved = best.as_ref().is_none_or(|(b, _, _)| monitored < b - cfg.min_delta);
        if improved {
            best = Some((monitored, code_head.clone(), query_head.clone()));
            log.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, c, q)) = best {
        *code_head = c;
        *query_head = q;
    }
    Ok(log)
}
