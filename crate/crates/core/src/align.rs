//! Iterative alignment of the two hashing heads.
//!
//! One head is frozen and supplies per-item targets; the other is trained
//! toward them with a bitwise cross-entropy, then the roles swap. A target
//! starts as the frozen head's pre-relax signs, each weighted by
//! `exp(gamma * |o|)`. Every in-batch negative that collides with the
//! positive's relaxed segment then subtracts its own weighted relaxed trits,
//! and the sign of the sum is the target.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashnet::{AdamWConfig, HashHead, OptimizerState};
use crate::linalg::Matrix;
use crate::pretrain::{batch_ranges, PairBatch};
use crate::scalar::Scalar;
use crate::ternary::{encode, PackedSegment, SegmentConfig, TernarySegments, Trit};

/// Clamp applied to outputs before taking logarithms.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Code,
    Query,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Code => Side::Query,
            Side::Query => Side::Code,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Code => "code",
            Side::Query => "query",
        })
    }
}

/// Which items act as negatives when adjusting a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Other in-batch items encoded by the frozen head.
    FixedModality,
    /// Other in-batch items encoded by the head being trained.
    TraineeModality,
}

impl FromStr for NegativeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed_modality" => Ok(Self::FixedModality),
            "trainee" | "trainee_modality" => Ok(Self::TraineeModality),
            _ => Err(Error::config(format!("unknown negative source {s:?}"))),
        }
    }
}

/// Which side relaxes its least confident bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideRelax {
    pub code: bool,
    pub query: bool,
}

impl SideRelax {
    pub const BOTH: SideRelax = SideRelax {
        code: true,
        query: true,
    };

    pub fn for_side(&self, side: Side) -> bool {
        match side {
            Side::Code => self.code,
            Side::Query => self.query,
        }
    }

    /// Segment configuration a side encodes with.
    pub fn config(&self, side: Side, seg: &SegmentConfig) -> SegmentConfig {
        if self.for_side(side) {
            *seg
        } else {
            seg.without_relaxing()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub gamma: f64,
    /// Epochs each head is trained before the roles swap.
    pub alternation_period: usize,
    pub max_epochs: usize,
    /// The head trained during the first period.
    pub first_trained: Side,
    pub negative_source: NegativeSource,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Stop once a full cycle raises the validation collision rate by less than this.
    pub min_improvement: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alternation_period: 5,
            max_epochs: 100,
            first_trained: Side::Query,
            negative_source: NegativeSource::TraineeModality,
            batch_size: 128,
            optimizer: AdamWConfig::default(),
            min_improvement: 1e-3,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config(format!(
                "gamma {} must be positive and finite",
                self.gamma
            )));
        }
        if self.alternation_period == 0 || self.alternation_period > self.max_epochs.max(1) {
            return Err(Error::config(format!(
                "alternation period {} must be in 1..={}",
                self.alternation_period,
                self.max_epochs.max(1)
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        Ok(())
    }
}

/// Per-segment binary targets, each entry `+1` or `-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectiveSegments {
    seg_len: usize,
    targets: Vec<i8>,
}

impl ObjectiveSegments {
    pub fn new(seg_len: usize, targets: Vec<i8>) -> Result<Self> {
        if seg_len == 0 || !targets.len().is_multiple_of(seg_len) {
            return Err(Error::shape("targets do not split into whole segments"));
        }
        if let Some(j) = targets.iter().position(|&t| t != 1 && t != -1) {
            return Err(Error::InvalidInput(format!(
                "target {} at bit {j} is not +1/-1",
                targets[j]
            )));
        }
        Ok(Self { seg_len, targets })
    }

    pub fn seg_len(&self) -> usize {
        self.seg_len
    }

    pub fn targets(&self) -> &[i8] {
        &self.targets
    }

    pub fn segment(&self, i: usize) -> &[i8] {
        &self.targets[i * self.seg_len..(i + 1) * self.seg_len]
    }
}

/// A negative as seen by the target adjustment: relaxed trits and raw outputs.
#[derive(Debug, Clone, Copy)]
pub struct Negative<'a, T> {
    pub ternary: &'a TernarySegments,
    pub raw: &'a [T],
}

/// Inputs of one target adjustment.
#[derive(Debug, Clone)]
pub struct AlignItem<'a, T> {
    /// Frozen head's outputs for the matched item.
    pub positive_raw: &'a [T],
    /// The same outputs after relaxing.
    pub positive_ternary: &'a TernarySegments,
    pub negatives: Vec<Negative<'a, T>>,
}

/// Precomputed view of one encoded item used in the hot loop.
struct Prepared<'a, T> {
    packed: &'a [PackedSegment],
    trits: &'a [Trit],
    weight: &'a [T],
}

fn pack_all(code: &TernarySegments) -> Vec<PackedSegment> {
    code.segments().map(PackedSegment::pack).collect()
}

fn exp_weights<T: Scalar>(raw: &[T], gamma: f64) -> Vec<T> {
    let g = T::lit(gamma);
    raw.iter().map(|&o| (g * o.abs()).exp()).collect()
}

/// Core of the target adjustment over prepared inputs.
fn objective_from_parts<'n, T: Scalar + 'n>(
    seg_len: usize,
    positive_raw: &[T],
    positive_weight: &[T],
    positive_packed: &[PackedSegment],
    negatives: impl Iterator<Item = Prepared<'n, T>> + Clone,
) -> Vec<i8> {
    let mut acc: Vec<T> = positive_raw
        .iter()
        .zip(positive_weight)
        .map(|(&o, &w)| if o > T::zero() { w } else { -w })
        .collect();
    for neg in negatives {
        for (i, (&p, &q)) in positive_packed.iter().zip(neg.packed).enumerate() {
            if !p.collides(q) {
                continue;
            }
            let span = i * seg_len..(i + 1) * seg_len;
            for ((a, &t), &w) in acc[span.clone()]
                .iter_mut()
                .zip(&neg.trits[span.clone()])
                .zip(&neg.weight[span])
            {
                match t {
                    Trit::Pos => *a -= w,
                    Trit::Neg => *a += w,
                    Trit::Zero => {}
                }
            }
        }
    }
    acc.iter()
        .zip(positive_raw)
        .map(|(&l, &o)| {
            if l > T::zero() {
                1
            } else if l < T::zero() {
                -1
            } else if o > T::zero() {
                // exact cancellation keeps the positive's own bit
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Adjusted per-bit targets for one item.
pub fn adjust_objective<T: Scalar>(
    item: &AlignItem<'_, T>,
    seg: &SegmentConfig,
    gamma: f64,
) -> Result<ObjectiveSegments> {
    let check = |code: &TernarySegments, raw: &[T], what: &str| -> Result<()> {
        if code.seg_len() != seg.seg_len || code.trits().len() != seg.total_bits || raw.len() != seg.total_bits {
            return Err(Error::shape(format!(
                "{what} does not match {} segments of {}",
                seg.num_segments(),
                seg.seg_len
            )));
        }
        Ok(())
    };
    check(item.positive_ternary, item.positive_raw, "positive")?;
    for (n, neg) in item.negatives.iter().enumerate() {
        check(neg.ternary, neg.raw, &format!("negative {n}"))?;
    }

    let pos_weight = exp_weights(item.positive_raw, gamma);
    let pos_packed = pack_all(item.positive_ternary);
    let neg_packed: Vec<Vec<PackedSegment>> = item.negatives.iter().map(|n| pack_all(n.ternary)).collect();
    let neg_weight: Vec<Vec<T>> = item.negatives.iter().map(|n| exp_weights(n.raw, gamma)).collect();
    let negs = item.negatives.iter().enumerate().map(|(n, neg)| Prepared {
        packed: &neg_packed[n],
        trits: neg.ternary.trits(),
        weight: &neg_weight[n],
    });
    let targets = objective_from_parts(seg.seg_len, item.positive_raw, &pos_weight, &pos_packed, negs);
    ObjectiveSegments::new(seg.seg_len, targets)
}

/// Bitwise cross-entropy of outputs against `+1/-1` targets, with its gradient.
///
/// Per bit `-(1 - l) ln(1 - o) - (1 + l) ln(1 + o)`, outputs clamped to
/// `[-1 + eps, 1 - eps]` first.
pub fn alignment_loss<T: Scalar>(o: &[T], target: &ObjectiveSegments) -> Result<(T, Vec<T>)> {
    alignment_loss_raw(o, target.targets())
}

fn alignment_loss_raw<T: Scalar>(o: &[T], target: &[i8]) -> Result<(T, Vec<T>)> {
    if o.len() != target.len() {
        return Err(Error::shape(format!(
            "{} outputs against {} targets",
            o.len(),
            target.len()
        )));
    }
    let one = T::one();
    let eps = T::lit(LOG_EPS);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(o.len());
    for (&v, &l) in o.iter().zip(target) {
        if l != 1 && l != -1 {
            return Err(Error::InvalidInput(format!("target {l} is not +1/-1")));
        }
        let l = T::lit(l as f64);
        let v = v.max(-one + eps).min(one - eps);
        loss -= (one - l) * (one - v).ln() + (one + l) * (one + v).ln();
        grad.push((one - l) / (one - v) - (one + l) / (one + v));
    }
    Ok((loss, grad))
}

/// Fraction of pairs whose codes collide in at least one segment.
pub fn positive_collision_rate(code: &[TernarySegments], query: &[TernarySegments]) -> f64 {
    if code.is_empty() {
        return 0.0;
    }
    let hits = code
        .iter()
        .zip(query)
        .filter(|(c, q)| {
            c.segments()
                .zip(q.segments())
                .any(|(a, b)| PackedSegment::pack(a).collides(PackedSegment::pack(b)))
        })
        .count();
    hits as f64 / code.len() as f64
}

/// Runs a head over every row in bounded chunks.
pub fn forward_all<T: Scalar>(head: &HashHead<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    const CHUNK: usize = 1024;
    let mut data = Vec::with_capacity(x.rows() * head.bits());
    for r in batch_ranges(x.rows(), CHUNK) {
        let idx: Vec<usize> = r.collect();
        data.extend_from_slice(head.forward_batch(&x.select_rows(&idx))?.as_slice());
    }
    Matrix::from_vec(x.rows(), head.bits(), data)
}

/// Encodes every row of a matrix of head outputs.
pub fn encode_rows<T: Scalar>(outputs: &Matrix<T>, seg: &SegmentConfig) -> Result<Vec<TernarySegments>> {
    outputs.iter_rows().map(|r| encode(r, seg)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignRecord {
    pub cycle: usize,
    pub side_trained: Side,
    /// Global epoch counter, 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_positive_collision_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignLog {
    /// Collision rate before any alignment epoch.
    pub initial_collision_rate: f64,
    pub records: Vec<AlignRecord>,
    pub converged: bool,
}

impl AlignLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,side_trained,epoch,mean_loss,val_positive_collision_rate\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.cycle, r.side_trained, r.epoch, r.mean_loss, r.val_positive_collision_rate
            );
        }
        out
    }

    /// Collision rate at the end of each completed cycle.
    pub fn cycle_rates(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut last_cycle = None;
        for r in &self.records {
            if last_cycle == Some(r.cycle) {
                *out.last_mut().expect("pushed with the cycle") = r.val_positive_collision_rate;
            } else {
                out.push(r.val_positive_collision_rate);
                last_cycle = Some(r.cycle);
            }
        }
        out
    }
}

struct Heads<'h, T> {
    code: &'h mut HashHead<T>,
    query: &'h mut HashHead<T>,
}

impl<T: Scalar> Heads<'_, T> {
    fn get(&self, side: Side) -> &HashHead<T> {
        match side {
            Side::Code => self.code,
            Side::Query => self.query,
        }
    }
}

fn side_inputs<'a, T>(data: &PairBatch<'a, T>, side: Side) -> &'a Matrix<T> {
    match side {
        Side::Code => data.code,
        Side::Query => data.query,
    }
}

fn collision_rate<T: Scalar>(
    heads: &Heads<'_, T>,
    data: PairBatch<'_, T>,
    seg: &SegmentConfig,
    relax: SideRelax,
) -> Result<f64> {
    let c = encode_rows(&forward_all(heads.code, data.code)?, &relax.config(Side::Code, seg))?;
    let q = encode_rows(&forward_all(heads.query, data.query)?, &relax.config(Side::Query, seg))?;
    Ok(positive_collision_rate(&c, &q))
}

/// Alternating alignment of the two heads.
///
/// Trains `cfg.first_trained` for `alternation_period` epochs with the other
/// head frozen, then swaps; a cycle is one period per side. Training stops
/// after a cycle that improves the validation collision rate by less than
/// `min_improvement`, or after `max_epochs` epochs. On a non-finite loss both
/// heads are restored to their state at the start of the failing period.
#[allow(clippy::too_many_arguments)]
pub fn iterative_train<T: Scalar>(
    code_head: &mut HashHead<T>,
    query_head: &mut HashHead<T>,
    train: PairBatch<'_, T>,
    val: Option<PairBatch<'_, T>>,
    seg: &SegmentConfig,
    relax: SideRelax,
    cfg: &AlignConfig,
    seed: u64,
) -> Result<AlignLog> {
    cfg.validate()?;
    seg.validate()?;
    if code_head.bits() != seg.total_bits || query_head.bits() != seg.total_bits {
        return Err(Error::shape(format!(
            "heads emit {}/{} bits, segment configuration expects {}",
            code_head.bits(),
            query_head.bits(),
            seg.total_bits
        )));
    }
    if train.len() < 2 {
        return Err(Error::InvalidInput("need at least two training pairs".into()));
    }

    let monitor = val.unwrap_or(train);
    let heads = Heads {
        code: code_head,
        query: query_head,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut code_opt = OptimizerState::new(heads.code, cfg.optimizer);
    let mut query_opt = OptimizerState::new(heads.query, cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = AlignLog {
        initial_collision_rate: collision_rate(&heads, monitor, seg, relax)?,
        ..AlignLog::default()
    };
    let mut cycle_start_rate = log.initial_collision_rate;
    let mut epoch = 0usize;
    let mut cycle = 1usize;
    let mut trainee = cfg.first_trained;

    while epoch < cfg.max_epochs {
        let fixed = trainee.other();
        let fixed_seg = relax.config(fixed, seg);
        let trainee_seg = relax.config(trainee, seg);

        // frozen for the whole period
        let fixed_out = forward_all(heads.get(fixed), side_inputs(&train, fixed))?;
        let fixed_codes = encode_rows(&fixed_out, &fixed_seg)?;
        let fixed_packed: Vec<Vec<PackedSegment>> = fixed_codes.iter().map(pack_all).collect();
        let fixed_weight: Vec<Vec<T>> = fixed_out.iter_rows().map(|r| exp_weights(r, cfg.gamma)).collect();

        let snapshot = (heads.code.clone(), heads.query.clone());
        let trainee_inputs = side_inputs(&train, trainee);

        for _ in 0..cfg.alternation_period {
            if epoch >= cfg.max_epochs {
                break;
            }
            epoch += 1;
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut seen = 0usize;

            for r in batch_ranges(order.len(), cfg.batch_size) {
                if r.len() < 2 {
                    continue;
                }
                let idx = &order[r];
                let (head, opt) = match trainee {
                    Side::Code => (&mut *heads.code, &mut code_opt),
                    Side::Query => (&mut *heads.query, &mut query_opt),
                };
                let trace = head.forward_trace(&trainee_inputs.select_rows(idx))?;
                let out = trace.output();

                // trainee-side negatives are encoded from the live outputs
                let live = match cfg.negative_source {
                    NegativeSource::FixedModality => None,
                    NegativeSource::TraineeModality => {
                        let codes = encode_rows(out, &trainee_seg)?;
                        let packed: Vec<Vec<PackedSegment>> = codes.iter().map(pack_all).collect();
                        let weight: Vec<Vec<T>> = out.iter_rows().map(|r| exp_weights(r, cfg.gamma)).collect();
                        Some((codes, packed, weight))
                    }
                };

                let n = T::lit(idx.len() as f64);
                let mut upstream = Matrix::zeros(idx.len(), seg.total_bits);
                let mut batch_loss = T::zero();
                for (b, &i) in idx.iter().enumerate() {
                    let targets = match &live {
                        None => {
                            let negs = idx.iter().filter(|&&j| j != i).map(|&j| Prepared {
                                packed: &fixed_packed[j],
                                trits: fixed_codes[j].trits(),
                                weight: &fixed_weight[j],
                            });
                            objective_from_parts(
                                seg.seg_len,
                                fixed_out.row(i),
                                &fixed_weight[i],
                                &fixed_packed[i],
                                negs,
                            )
                        }
                        Some((codes, packed, weight)) => {
                            let negs = (0..idx.len()).filter(|&c| c != b).map(|c| Prepared {
                                packed: &packed[c],
                                trits: codes[c].trits(),
                                weight: &weight[c],
                            });
                            objective_from_parts(
                                seg.seg_len,
                                fixed_out.row(i),
                                &fixed_weight[i],
                                &fixed_packed[i],
                                negs,
                            )
                        }
                    };
                    let (l, g) = alignment_loss_raw(out.row(b), &targets)?;
                    batch_loss += l;
                    for (u, gv) in upstream.row_mut(b).iter_mut().zip(g) {
                        *u = gv / n;
                    }
                }
                if !batch_loss.is_finite() {
                    *heads.code = snapshot.0;
                    *heads.query = snapshot.1;
                    return Err(Error::NonFinite {
                        path: format!("alignment loss at epoch {epoch} ({trainee} head)"),
                    });
                }
                total += batch_loss.as_f64();
                seen += idx.len();
                let grads = head.backward_batch(&trace, &upstream)?;
                if let Err(e) = opt.step(head, &grads) {
                    *heads.code = snapshot.0;
                    *heads.query = snapshot.1;
                    return Err(e);
                }
            }

            log.records.push(AlignRecord {
                cycle,
                side_trained: trainee,
                epoch,
                mean_loss: total / seen.max(1) as f64,
                val_positive_collision_rate: collision_rate(&heads, monitor, seg, relax)?,
            });
        }

        if trainee != cfg.first_trained {
            // a full cycle has completed
            let rate = log
                .records
                .last()
                .map_or(cycle_start_rate, |r| r.val_positive_collision_rate);
            if rate - cycle_start_rate < cfg.min_improvement {
                log.converged = true;
                break;
            }
            cycle_start_rate = rate;
            cycle += 1;
        }
        trainee = trainee.other();
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg3() -> SegmentConfig {
        SegmentConfig::new(3, 3, 1, 0.5).unwrap()
    }

    #[test]
    fn worked_adjustment() {
        let cfg = seg3();
        let pos_raw = [0.2, 0.4, 0.3];
        let pos = encode(&pos_raw, &cfg).unwrap();
        assert_eq!(pos, TernarySegments::from_i8(&[&[0, 1, 1]]).unwrap());

        let a_raw = [0.1, 0.7, 0.7];
        let a = encode(&a_raw, &cfg).unwrap();
        assert_eq!(a, TernarySegments::from_i8(&[&[0, 1, 1]]).unwrap());
        let b_raw = [0.2, 0.7, -0.6];
        let b = encode(&b_raw, &cfg).unwrap();
        assert_eq!(b, TernarySegments::from_i8(&[&[0, 1, -1]]).unwrap());

        let item = AlignItem {
            positive_raw: &pos_raw[..],
            positive_ternary: &pos,
            negatives: vec![
                Negative {
                    ternary: &a,
                    raw: &a_raw[..],
                },
                Negative {
                    ternary: &b,
                    raw: &b_raw[..],
                },
            ],
        };
        let target = adjust_objective(&item, &cfg, 1.0).unwrap();

        // oracle: l = [e^0.2 - 0, e^0.4 - e^0.7, e^0.3 - e^0.7]
        let l = [0.2f64.exp(), 0.4f64.exp() - 0.7f64.exp(), 0.3f64.exp() - 0.7f64.exp()];
        assert!((l[0] - 1.221).abs() < 1e-3 && (l[1] + 0.522).abs() < 1e-3 && (l[2] + 0.664).abs() < 1e-3);
        let expected: Vec<i8> = l.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect();
        assert_eq!(target.targets(), &expected[..]);
        assert_eq!(target.targets(), &[1, -1, -1]);
    }

    #[test]
    fn without_colliding_negatives_the_target_is_the_positive_sign() {
        let cfg = seg3();
        let pos_raw = [0.9, -0.8, 0.7];
        let pos = encode(&pos_raw, &cfg).unwrap();
        let neg_raw = [-0.9, 0.8, -0.7];
        let neg = encode(&neg_raw, &cfg).unwrap();
        let item = AlignItem {
            positive_raw: &pos_raw[..],
            positive_ternary: &pos,
            negatives: vec![Negative {
                ternary: &neg,
                raw: &neg_raw[..],
            }],
        };
        assert_eq!(adjust_objective(&item, &cfg, 1.0).unwrap().targets(), &[1, -1, 1]);
    }

    #[test]
    fn two_strong_negatives_flip_a_weak_bit() {
        let cfg = SegmentConfig::new(1, 1, 0, 0.5).unwrap();
        let pos_raw = [0.1];
        let pos = encode(&pos_raw, &cfg).unwrap();
        let neg_raw = [0.9];
        let neg = encode(&neg_raw, &cfg).unwrap();
        for gamma in [0.5, 1.0, 3.0] {
            let item = AlignItem {
                positive_raw: &pos_raw[..],
                positive_ternary: &pos,
                negatives: vec![
                    Negative {
                        ternary: &neg,
                        raw: &neg_raw[..],
                    };
                    2
                ],
            };
            // e^{0.1 g} - 2 e^{0.9 g} < 0
            assert!((0.1_f64 * gamma).exp() - 2.0 * (0.9_f64 * gamma).exp() < 0.0);
            assert_eq!(adjust_objective(&item, &cfg, gamma).unwrap().targets(), &[-1]);
        }
    }

    #[test]
    fn exact_cancellation_keeps_the_positive_bit() {
        let cfg = SegmentConfig::new(1, 1, 0, 0.5).unwrap();
        let raw = [0.4];
        let code = encode(&raw, &cfg).unwrap();
        let item = AlignItem {
            positive_raw: &raw[..],
            positive_ternary: &code,
            negatives: vec![Negative {
                ternary: &code,
                raw: &raw[..],
            }],
        };
        assert_eq!(adjust_objective(&item, &cfg, 1.0).unwrap().targets(), &[1]);
    }

    #[test]
    fn loss_examples() {
        let plus = ObjectiveSegments::new(1, vec![1]).unwrap();
        let minus = ObjectiveSegments::new(1, vec![-1]).unwrap();
        assert_eq!(alignment_loss(&[0.0f64], &plus).unwrap().0, 0.0);
        let (l, _) = alignment_loss(&[0.5f64], &minus).unwrap();
        assert!((l - (-2.0 * 0.5f64.ln())).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        let (l, _) = alignment_loss(&[0.5f64], &plus).unwrap();
        assert!((l + 0.8109).abs() < 1e-4);
    }

    #[test]
    fn zero_targets_are_rejected() {
        assert!(ObjectiveSegments::new(2, vec![1, 0]).is_err());
        assert!(alignment_loss_raw(&[0.1f64], &[0]).is_err());
    }

    #[test]
    fn loss_is_monotone_in_the_output() {
        let plus = ObjectiveSegments::new(1, vec![1]).unwrap();
        let minus = ObjectiveSegments::new(1, vec![-1]).unwrap();
        let grid: Vec<f64> = (-999..=999).map(|i| i as f64 * 1e-3).collect();
        for w in grid.windows(2) {
            let a = alignment_loss(&[w[0]], &plus).unwrap().0;
            let b = alignment_loss(&[w[1]], &plus).unwrap().0;
            assert!(b < a, "not decreasing at {}", w[0]);
            let a = alignment_loss(&[w[0]], &minus).unwrap().0;
            let b = alignment_loss(&[w[1]], &minus).unwrap().0;
            assert!(b > a, "not increasing at {}", w[0]);
        }
    }

    #[test]
    fn loss_gradient_matches_central_difference() {
        let target = ObjectiveSegments::new(4, vec![1, -1, -1, 1]).unwrap();
        let o = [-0.9f64, -0.3, 0.45, 0.9];
        let (_, g) = alignment_loss(&o, &target).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut p = o;
            p[j] += h;
            let lp = alignment_loss(&p, &target).unwrap().0;
            p[j] -= 2.0 * h;
            let lm = alignment_loss(&p, &target).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(((g[j] - fd) / fd).abs() < 1e-4);
        }
    }

    #[test]
    fn clamping_keeps_the_loss_finite() {
        let minus = ObjectiveSegments::new(1, vec![-1]).unwrap();
        let (l, g) = alignment_loss(&[1.0f64], &minus).unwrap();
        assert!(l.is_finite() && g[0].is_finite());
    }

    #[test]
    fn collision_rate_counts_any_colliding_segment() {
        let a = TernarySegments::from_i8(&[&[1, 1], &[-1, -1]]).unwrap();
        let b = TernarySegments::from_i8(&[&[-1, 1], &[-1, 0]]).unwrap();
        let c = TernarySegments::from_i8(&[&[-1, -1], &[1, 1]]).unwrap();
        assert_eq!(positive_collision_rate(&[a.clone(), a], &[b, c]), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(AlignConfig::default().validate().is_ok());
        let bad = AlignConfig {
            gamma: 0.0,
            ..AlignConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlignConfig {
            alternation_period: 200,
            ..AlignConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
