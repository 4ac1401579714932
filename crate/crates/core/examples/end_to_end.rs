//! Synthetic end-to-end run: pretrain, align, index, evaluate.
//!
//! `cargo run --release -p seghash --example end_to_end -- [noise] [mode] [hidden]`

use std::time::Instant;

use seghash::align::{iterative_train, AlignConfig};
use seghash::pipeline::{evaluate, init_heads, Ablation, EvalOptions, Reference, RetrievalSystem};
use seghash::pretrain::{pretrain_run, PairBatch, PretrainConfig};
use seghash::storage::Relevance;
use seghash::synth::{generate, SynthConfig};
use seghash::ternary::SegmentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).map_or(Ok(SynthConfig::default().noise), |s| s.parse())?;
    let mode: Ablation = args.get(2).map_or(Ok(Ablation::default()), |s| s.parse())?;
    let hidden: usize = args
        .get(3)
        .map_or(Ok(seghash::hashnet::DEFAULT_HIDDEN), |s| s.parse())?;

    let data = generate(&SynthConfig {
        count: 13_000,
        noise,
        ..SynthConfig::default()
    })?;
    let (train, rest) = data.split(10_000)?;
    let (val, test) = rest.split(1_000)?;
    let tc = train.code.map(|v| v as f64);
    let tq = train.query.map(|v| v as f64);
    let vc = val.code.map(|v| v as f64);
    let vq = val.query.map(|v| v as f64);
    let train_b = PairBatch::new(&tc, &tq)?;
    let val_b = PairBatch::new(&vc, &vq)?;

    let (mut code, mut query) = init_heads(128, 128, hidden, 128, 7)?;
    let t = Instant::now();
    let log = pretrain_run(
        &mut code,
        &mut query,
        train_b,
        Some(val_b),
        &PretrainConfig::default(),
        7,
    )?;
    println!(
        "pretrain: {} epochs, best {:?}, {:.1}s",
        log.epochs.len(),
        log.best_epoch,
        t.elapsed().as_secs_f64()
    );
    let reference = (code.cast::<f32>(), query.cast::<f32>());

    let seg = SegmentConfig::with_defaults(128)?;
    let relax = mode.relax.side_relax();
    if mode.iterative {
        let t = Instant::now();
        let alog = iterative_train(
            &mut code,
            &mut query,
            train_b,
            Some(val_b),
            &seg,
            relax,
            &AlignConfig::default(),
            7,
        )?;
        println!(
            "align: {} epochs, initial collision rate {:.4}, converged {}, {:.1}s",
            alog.records.len(),
            alog.initial_collision_rate,
            alog.converged,
            t.elapsed().as_secs_f64()
        );
        print!("{}", alog.to_csv());
    }
    let system = RetrievalSystem::new(code.cast(), query.cast(), seg, relax)?;
    let (report, _) = evaluate(
        &system,
        &test.code,
        &test.query,
        &Relevance::identity(test.query.rows()),
        Some(Reference {
            code_head: &reference.0,
            query_head: &reference.1,
        }),
        &EvalOptions::default(),
    )?;
    println!("{mode}: {}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
