use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seghash::storage::{load_checkpoint, load_embeddings, load_index};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_seghash"));
    c.env("RUST_LOG", "warn").env_remove("SEGHASH_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth -> pretrain -> align at toy size; returns (data dir, pretrain dir, align dir).
fn toy_pipeline(root: &Path, mode: &str) -> (PathBuf, PathBuf, PathBuf) {
    let data = root.join("data");
    let pre = root.join("pre");
    let ali = root.join(format!("align_{mode}"));
    if !data.exists() {
        ok(&[
            "synth",
            "--train",
            "200",
            "--val",
            "50",
            "--test",
            "60",
            "--dim",
            "8",
            "--clusters",
            "4",
            "--noise",
            "0.3",
            "--seed",
            "4",
            "--out",
            s(&data),
        ]);
        ok(&[
            "pretrain",
            "--code-emb",
            s(&data.join("train_code.sdhe")),
            "--query-emb",
            s(&data.join("train_query.sdhe")),
            "--val-code-emb",
            s(&data.join("val_code.sdhe")),
            "--val-query-emb",
            s(&data.join("val_query.sdhe")),
            "--bits",
            "32",
            "--hidden",
            "16",
            "--epochs",
            "3",
            "--out",
            s(&pre),
        ]);
    }
    ok(&[
        "align",
        "--code-head",
        s(&pre.join("code_head.sdhm")),
        "--query-head",
        s(&pre.join("query_head.sdhm")),
        "--code-emb",
        s(&data.join("train_code.sdhe")),
        "--query-emb",
        s(&data.join("train_query.sdhe")),
        "--epochs",
        "2",
        "--alt-period",
        "1",
        "--mode",
        mode,
        "--out",
        s(&ali),
    ]);
    (data, pre, ali)
}

#[test]
fn synth_writes_valid_files_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--train",
            "30",
            "--val",
            "0",
            "--test",
            "10",
            "--dim",
            "6",
            "--seed",
            "2",
            "--out",
            s(out),
        ]);
    }
    for f in [
        "train_code.sdhe",
        "train_query.sdhe",
        "test_code.sdhe",
        "train_relevance.tsv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(!a.join("val_code.sdhe").exists());
    let code = load_embeddings(a.join("train_code.sdhe")).unwrap();
    assert_eq!((code.rows(), code.cols()), (30, 6));
    let rel = std::fs::read_to_string(a.join("test_relevance.tsv")).unwrap();
    assert_eq!(rel.lines().count(), 10);
    assert!(a.join("manifest.json").exists());

    let same = dir.path().join("same");
    ok(&[
        "synth",
        "--train",
        "5",
        "--val",
        "0",
        "--test",
        "0",
        "--noise",
        "0",
        "--out",
        s(&same),
    ]);
    assert_eq!(
        load_embeddings(same.join("train_code.sdhe")).unwrap(),
        load_embeddings(same.join("train_query.sdhe")).unwrap()
    );
}

#[test]
fn zero_epoch_pretrain_keeps_initial_weights_at_both_widths() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&[
        "synth",
        "--train",
        "20",
        "--val",
        "0",
        "--test",
        "0",
        "--dim",
        "4",
        "--out",
        s(&data),
    ]);
    for bits in ["128", "256"] {
        let out = dir.path().join(bits);
        ok(&[
            "pretrain",
            "--code-emb",
            s(&data.join("train_code.sdhe")),
            "--query-emb",
            s(&data.join("train_query.sdhe")),
            "--bits",
            bits,
            "--hidden",
            "8",
            "--epochs",
            "0",
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        let code = load_checkpoint(out.join("code_head.sdhm")).unwrap();
        let (init, _) = seghash::pipeline::init_heads(4, 4, 8, bits.parse().unwrap(), 3).unwrap();
        assert_eq!(code, init.cast::<f32>());
        assert_eq!(code.bits(), bits.parse::<usize>().unwrap());
    }
}

#[test]
fn full_pipeline_through_eval_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let (data, pre, ali) = toy_pipeline(dir.path(), "A_BR");
    let idx = dir.path().join("idx");
    ok(&[
        "build-index",
        "--code-head",
        s(&ali.join("code_head.sdhm")),
        "--code-emb",
        s(&data.join("test_code.sdhe")),
        "--out",
        s(&idx),
    ]);
    let index = load_index(idx.join("index.sdhi")).unwrap();
    assert_eq!(index.item_count(), 60);

    let ev = dir.path().join("eval");
    ok(&[
        "eval",
        "--code-head",
        s(&ali.join("code_head.sdhm")),
        "--query-head",
        s(&ali.join("query_head.sdhm")),
        "--ref-code-head",
        s(&pre.join("code_head.sdhm")),
        "--ref-query-head",
        s(&pre.join("query_head.sdhm")),
        "--code-emb",
        s(&data.join("test_code.sdhe")),
        "--query-emb",
        s(&data.join("test_query.sdhe")),
        "--per-query",
        "--out",
        s(&ev),
    ]);
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("metrics.json")).unwrap()).unwrap();
    for key in ["r_at_1", "mrr", "ndcg_at_10", "dual_relaxed_count", "dense_mrr"] {
        let v = metrics[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!(v.is_finite() && v >= 0.0, "{key} = {v}");
    }
    assert!(metrics["reference"]["faithfulness"].as_f64().is_some());
    assert!(metrics["reference"]["repair_ratio"].is_object());
    let per_query = std::fs::read_to_string(ev.join("per_query.csv")).unwrap();
    assert_eq!(per_query.lines().count(), 61);

    // an indexed item's own code embedding, queried through the code head, comes back first after rerank
    let q = dir.path().join("q");
    ok(&[
        "query",
        "--index",
        s(&idx.join("index.sdhi")),
        "--query-head",
        s(&ali.join("code_head.sdhm")),
        "--query-emb",
        s(&data.join("test_code.sdhe")),
        "--code-emb",
        s(&data.join("test_code.sdhe")),
        "--rerank",
        "--query-id",
        "7",
        "--out",
        s(&q),
    ]);
    let results = std::fs::read_to_string(q.join("results.csv")).unwrap();
    let first = results.lines().nth(1).unwrap();
    assert!(first.starts_with("7,1,7,"), "{first}");

    // empty relevance is an error
    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let o = run(&[
        "eval",
        "--code-head",
        s(&ali.join("code_head.sdhm")),
        "--query-head",
        s(&ali.join("query_head.sdhm")),
        "--code-emb",
        s(&data.join("test_code.sdhe")),
        "--query-emb",
        s(&data.join("test_query.sdhe")),
        "--relevance",
        s(&empty),
        "--out",
        s(&dir.path().join("bad")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn na_modes_pass_heads_through() {
    let dir = tempfile::tempdir().unwrap();
    let (_, pre, ali) = toy_pipeline(dir.path(), "NA_SR");
    for f in ["code_head.sdhm", "query_head.sdhm"] {
        assert_eq!(std::fs::read(pre.join(f)).unwrap(), std::fs::read(ali.join(f)).unwrap());
    }
    let log = std::fs::read_to_string(ali.join("align_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    let o = run(&[
        "align",
        "--code-head",
        "x",
        "--query-head",
        "y",
        "--code-emb",
        "a",
        "--query-emb",
        "b",
        "--mode",
        "A_XX",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("A_XX"));
    let o = run(&[
        "build-index",
        "--code-head",
        "missing.sdhm",
        "--code-emb",
        "m.sdhe",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .args([
            "synth",
            "--train",
            "2",
            "--val",
            "0",
            "--test",
            "0",
            "--out",
            s(dir.path()),
        ])
        .env("SEGHASH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, pre, ali) = toy_pipeline(dir.path(), "A_BR");
    for (orig, files) in [
        (&pre, ["code_head.sdhm", "query_head.sdhm"]),
        (&ali, ["code_head.sdhm", "align_log.csv"]),
    ] {
        let again = dir
            .path()
            .join(format!("replay_{}", orig.file_name().unwrap().to_str().unwrap()));
        ok(&[
            "replay",
            "--manifest",
            s(&orig.join("manifest.json")),
            "--out",
            s(&again),
        ]);
        for f in files {
            assert_eq!(
                std::fs::read(orig.join(f)).unwrap(),
                std::fs::read(again.join(f)).unwrap(),
                "{f}"
            );
        }
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(ali.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "align");
    assert_eq!(m["mode"], "A_BR");
    assert_eq!(m["seg_cfg"]["seg_len"], 16);
    assert!(m["started"].as_str().is_some());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "bench",
        "--sizes",
        "300,600",
        "--bits",
        "32",
        "--queries",
        "3",
        "--out",
        s(dir.path()),
    ]);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("size,method,bits,seconds,reduction%"));
    assert_eq!(lines.count(), 6);
}
