use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use seghash::align::{encode_rows, forward_all, iterative_train, AlignConfig, AlignLog, Side};
use seghash::baselines::dense_rerank;
use seghash::bench::{bench_csv, run_bench, BenchConfig};
use seghash::hashnet::{AdamWConfig, HashHead};
use seghash::index::Searcher;
use seghash::pipeline::{evaluate, init_heads, query_rows_csv, EvalOptions, Reference, RetrievalSystem};
use seghash::pretrain::{pretrain_run, InitialLossConfig, PairBatch, PretrainConfig};
use seghash::storage::{
    atomic_write, load_checkpoint, load_embeddings, load_index, load_relevance, save_checkpoint, save_embeddings,
    save_index, Relevance,
};
use seghash::synth::{generate, SynthConfig};
use seghash::{Matrix32, Matrix64};

use crate::args::*;
use crate::manifest::RunManifest;
use crate::UsageError;

pub const CODE_HEAD_FILE: &str = "code_head.sdhm";
pub const QUERY_HEAD_FILE: &str = "query_head.sdhm";
pub const INDEX_FILE: &str = "index.sdhi";
pub const METRICS_FILE: &str = "metrics.json";

/// Which heads and encoding an `align` run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Encoding {
    mode: seghash::pipeline::Ablation,
    seg: seghash::ternary::SegmentConfig,
}

fn write_text(out: &Path, name: &str, text: &str, m: &mut RunManifest) -> Result<()> {
    atomic_write(out.join(name), text.as_bytes())?;
    m.outputs.push(name.to_string());
    Ok(())
}

fn widen(m: &Matrix32) -> Matrix64 {
    m.map(|v| v as f64)
}

fn optimizer(o: &OptimArgs) -> AdamWConfig {
    AdamWConfig {
        learning_rate: o.lr,
        weight_decay: o.weight_decay,
        ..AdamWConfig::default()
    }
}

struct Pairs {
    train: (Matrix64, Matrix64),
    val: Option<(Matrix64, Matrix64)>,
}

fn load_pairs(d: &PairInputs, m: &mut RunManifest) -> Result<Pairs> {
    m.input("code_emb", &d.code_emb);
    m.input("query_emb", &d.query_emb);
    let train = (
        widen(&load_embeddings(&d.code_emb)?),
        widen(&load_embeddings(&d.query_emb)?),
    );
    let val = match (&d.val_code_emb, &d.val_query_emb) {
        (Some(c), Some(q)) => {
            m.input("val_code_emb", c);
            m.input("val_query_emb", q);
            Some((widen(&load_embeddings(c)?), widen(&load_embeddings(q)?)))
        }
        _ => None,
    };
    Ok(Pairs { train, val })
}

pub(crate) fn synth_config(a: &SynthArgs) -> SynthConfig {
    SynthConfig {
        count: a.train + a.val + a.test,
        dim: a.dim,
        clusters: a.clusters,
        center_scale: a.center_scale,
        spread: a.spread,
        noise: a.noise,
        normalize: !a.raw,
        seed: a.seed,
    }
}

pub fn synth(a: &SynthArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let cfg = synth_config(a);
    m.seed = Some(a.seed);
    m.synth_cfg = Some(cfg);
    let data = generate(&cfg)?;
    let (train, rest) = data.split(a.train)?;
    let (val, test) = rest.split(a.val)?;
    for (name, part) in [("train", train), ("val", val), ("test", test)] {
        let n = part.code.rows();
        if n == 0 {
            continue;
        }
        for (side, store) in [("code", &part.code), ("query", &part.query)] {
            let file = format!("{name}_{side}.sdhe");
            save_embeddings(out.join(&file), store)?;
            m.outputs.push(file);
        }
        write_text(
            out,
            &format!("{name}_relevance.tsv"),
            &Relevance::identity(n).to_tsv(),
            m,
        )?;
        info!("{name}: {n} pairs");
    }
    Ok(())
}

pub(crate) fn pretrain_config(a: &PretrainArgs) -> PretrainConfig {
    PretrainConfig {
        loss: InitialLossConfig {
            margin: a.margin,
            ..InitialLossConfig::default()
        },
        optimizer: optimizer(&a.optim),
        batch_size: a.optim.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        ..PretrainConfig::default()
    }
}

pub fn pretrain(a: &PretrainArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let data = load_pairs(&a.data, m)?;
    let cfg = pretrain_config(a);
    m.seed = Some(a.seed);
    m.loss_cfg = Some(cfg);
    if a.bits == 0 {
        return Err(UsageError("--bits must be positive".into()).into());
    }
    let (tc, tq) = &data.train;
    let (mut code, mut query) = init_heads(tc.cols(), tq.cols(), a.hidden, a.bits, a.seed)?;
    let train = PairBatch::new(tc, tq)?;
    let val = match &data.val {
        Some((c, q)) => Some(PairBatch::new(c, q)?),
        None => None,
    };
    let log = pretrain_run(&mut code, &mut query, train, val, &cfg, a.seed)?;
    info!(
        "pretrain: {} epochs, best {:?}, stopped early {}",
        log.epochs.len(),
        log.best_epoch,
        log.stopped_early
    );
    save_heads(out, &code, &query, m)?;
    write_text(out, "pretrain_log.csv", &log.to_csv(), m)
}

fn save_heads(out: &Path, code: &HashHead<f64>, query: &HashHead<f64>, m: &mut RunManifest) -> Result<()> {
    save_checkpoint(out.join(CODE_HEAD_FILE), code)?;
    save_checkpoint(out.join(QUERY_HEAD_FILE), query)?;
    m.outputs.push(CODE_HEAD_FILE.into());
    m.outputs.push(QUERY_HEAD_FILE.into());
    Ok(())
}

fn load_head(path: &Path, role: &str, m: &mut RunManifest) -> Result<HashHead<f32>> {
    m.input(role, path);
    load_checkpoint(path).with_context(|| format!("loading {role} checkpoint"))
}

pub(crate) fn align_config(a: &AlignArgs) -> AlignConfig {
    AlignConfig {
        gamma: a.gamma,
        alternation_period: a.alt_period,
        max_epochs: a.epochs,
        first_trained: a.first.into(),
        negative_source: a.negatives.into(),
        batch_size: a.optim.batch,
        optimizer: optimizer(&a.optim),
        min_improvement: a.min_improvement,
    }
}

pub fn align(a: &AlignArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let mut code = load_head(&a.code_head, "code_head", m)?.cast::<f64>();
    let mut query = load_head(&a.query_head, "query_head", m)?.cast::<f64>();
    let seg = a.seg.config(code.bits())?;
    let cfg = align_config(a);
    cfg.validate()?;
    m.seed = Some(a.seed);
    m.mode = Some(a.seg.mode);
    m.seg_cfg = Some(seg);
    m.align_cfg = Some(cfg);
    let data = load_pairs(&a.data, m)?;
    let relax = a.seg.mode.relax.side_relax();

    let log = if a.seg.mode.iterative {
        let (tc, tq) = &data.train;
        let val = match &data.val {
            Some((c, q)) => Some(PairBatch::new(c, q)?),
            None => None,
        };
        let log = iterative_train(
            &mut code,
            &mut query,
            PairBatch::new(tc, tq)?,
            val,
            &seg,
            relax,
            &cfg,
            a.seed,
        )?;
        info!(
            "align: {} epochs, collision rate {:.4} -> {:?}, converged {}",
            log.records.len(),
            log.initial_collision_rate,
            log.cycle_rates().last(),
            log.converged
        );
        log
    } else {
        info!("mode {} skips iterative training", a.seg.mode);
        AlignLog::default()
    };
    save_heads(out, &code, &query, m)?;
    write_text(out, "align_log.csv", &log.to_csv(), m)?;
    let enc = Encoding { mode: a.seg.mode, seg };
    write_text(out, "encoding.json", &serde_json::to_string_pretty(&enc)?, m)
}

pub fn build_index(a: &BuildIndexArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let head = load_head(&a.code_head, "code_head", m)?;
    m.input("code_emb", &a.code_emb);
    let emb = load_embeddings(&a.code_emb)?;
    let seg = a.seg.config(head.bits())?;
    m.mode = Some(a.seg.mode);
    m.seg_cfg = Some(seg);
    let code_seg = a.seg.mode.relax.side_relax().config(Side::Code, &seg);
    let codes = encode_rows(&forward_all(&head, &emb)?, &code_seg)?;
    let index = seghash::index::SegmentedIndex::build(&codes, &code_seg)?;
    save_index(out.join(INDEX_FILE), &index)?;
    m.outputs.push(INDEX_FILE.into());
    info!("indexed {} codes in {} tables", index.item_count(), index.table_count());
    Ok(())
}

pub fn query(a: &QueryArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    m.input("index", &a.index);
    let index = load_index(&a.index)?;
    let head = load_head(&a.query_head, "query_head", m)?;
    m.input("query_emb", &a.query_emb);
    let emb = load_embeddings(&a.query_emb)?;
    let seg = a.seg.config(head.bits())?;
    let stored = index.config();
    if stored.seg_len != seg.seg_len || stored.total_bits != seg.total_bits {
        return Err(UsageError(format!(
            "index uses {}-bit codes in {}-bit segments; query settings give {} and {}",
            stored.total_bits, stored.seg_len, seg.total_bits, seg.seg_len
        ))
        .into());
    }
    m.mode = Some(a.seg.mode);
    m.seg_cfg = Some(seg);
    let codes = if a.rerank {
        let path = a.code_emb.as_ref().context("--rerank needs --code-emb")?;
        m.input("code_emb", path);
        Some(load_embeddings(path)?)
    } else {
        None
    };
    let rows: Vec<usize> = match a.query_id {
        Some(i) if i >= emb.rows() => {
            return Err(UsageError(format!("query {i} outside {} query rows", emb.rows())).into())
        }
        Some(i) => vec![i],
        None => (0..emb.rows()).collect(),
    };
    let query_seg = a.seg.mode.relax.side_relax().config(Side::Query, &seg);
    let mut searcher = Searcher::new(&index);
    let mut csv = String::from(if a.rerank {
        "query,rank,code,similarity\n"
    } else {
        "query,rank,code,hits\n"
    });
    for qi in rows {
        let x = emb.select_rows(&[qi]);
        let code = encode_rows(&forward_all(&head, &x)?, &query_seg)?;
        let recalled = searcher.recall(&code[0], a.top)?;
        match &codes {
            Some(store) => {
                for (r, (id, s)) in dense_rerank(emb.row(qi), &recalled.ids(), store, a.similarity.into())?
                    .into_iter()
                    .enumerate()
                {
                    csv.push_str(&format!("{qi},{},{id},{s}\n", r + 1));
                }
            }
            None => {
                for (r, c) in recalled.candidates.iter().enumerate() {
                    csv.push_str(&format!("{qi},{},{},{}\n", r + 1, c.id, c.hits));
                }
            }
        }
    }
    write_text(out, "results.csv", &csv, m)
}

pub fn eval(a: &EvalArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let code_head = load_head(&a.code_head, "code_head", m)?;
    let query_head = load_head(&a.query_head, "query_head", m)?;
    m.input("code_emb", &a.code_emb);
    m.input("query_emb", &a.query_emb);
    let code_emb = load_embeddings(&a.code_emb)?;
    let query_emb = load_embeddings(&a.query_emb)?;
    if let Some(p) = &a.relevance {
        m.input("relevance", p);
    }
    let relevance = load_relevance(a.relevance.as_deref(), query_emb.rows(), code_emb.rows())?;
    if relevance.duplicates > 0 {
        log::warn!("ignored {} duplicate relevance lines", relevance.duplicates);
    }
    let reference = match (&a.ref_code_head, &a.ref_query_head) {
        (Some(c), Some(q)) => Some((load_head(c, "ref_code_head", m)?, load_head(q, "ref_query_head", m)?)),
        _ => None,
    };
    let seg = a.seg.config(code_head.bits())?;
    m.mode = Some(a.seg.mode);
    m.seg_cfg = Some(seg);
    let system = RetrievalSystem::new(code_head, query_head, seg, a.seg.mode.relax.side_relax())?;
    let opts = EvalOptions {
        max_candidates: a.top,
        similarity: a.similarity.into(),
    };
    let (report, rows) = evaluate(
        &system,
        &code_emb,
        &query_emb,
        &relevance,
        reference.as_ref().map(|(c, q)| Reference {
            code_head: c,
            query_head: q,
        }),
        &opts,
    )?;
    info!(
        "MRR {:.4} (dense {:.4}), R@1 {:.4}",
        report.mrr, report.dense_mrr, report.r_at_1
    );
    write_text(out, METRICS_FILE, &serde_json::to_string_pretty(&report)?, m)?;
    if a.per_query {
        write_text(out, "per_query.csv", &query_rows_csv(&rows), m)?;
    }
    Ok(())
}

pub(crate) fn bench_config(a: &BenchArgs) -> BenchConfig {
    BenchConfig {
        sizes: a.sizes.clone(),
        bits: a.bits.clone(),
        queries: a.queries,
        top_n: a.top,
        query_noise: a.query_noise,
        include_lsh: !a.no_lsh,
        repeats: a.repeats,
        seed: a.seed,
    }
}

pub fn bench(a: &BenchArgs, out: &Path, m: &mut RunManifest) -> Result<()> {
    let cfg = bench_config(a);
    m.seed = Some(a.seed);
    m.threads = 1;
    m.bench_cfg = Some(cfg.clone());
    let rows = run_bench(&cfg, |r| {
        info!(
            "{} {} bits {}: {:.6} s/query, {:.1} candidates",
            r.size,
            r.method.name(),
            r.bits,
            r.seconds,
            r.mean_candidates
        )
    })?;
    write_text(out, "bench.csv", &bench_csv(&rows), m)?;
    write_text(out, "bench.json", &serde_json::to_string_pretty(&rows)?, m)
}

pub fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    if !out.is_dir() {
        bail!(UsageError(format!("{} is not a directory", out.display())));
    }
    Ok(())
}
