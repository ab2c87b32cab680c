use std::path::Path;
use std::process::Command;

use spanmax::head::{PredictionRecord, TokenScore};
use spanmax::tokenizer::tokenize;
use spanmax_cli::RunManifest;

fn cli(args: &[&str]) -> i32 {
    spanmax_cli::main_with_args(std::iter::once("spanmax").chain(args.iter().copied()))
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path, command: &str) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("manifest.{command}.json"))).unwrap()).unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Small synthetic train/test split plus a trained checkpoint in `dir`.
fn trained(dir: &Path) {
    let d = s(dir);
    assert_eq!(cli(&["synth", "--size", "200", "--test-size", "50", "--seed", "4", "--out", &d]), 0);
    let train = format!("{d}/train.jsonl");
    assert_eq!(cli(&["train", "--train", &train, "--epochs", "2", "--d", "16", "--layers", "1", "--seed", "1", "--out", &d]), 0);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(cli(&[]), 2);
    assert_eq!(cli(&["train"]), 2);
    assert_eq!(cli(&["synth", "--size", "ten"]), 2);
    assert_eq!(cli(&["--help"]), 0);

    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "size=10\nsizee=3\n").unwrap();
    assert_eq!(cli(&["synth", "--config", &s(&cfg), "--out", &d]), 2);
    assert_eq!(cli(&["train", "--train", "x.jsonl", "--mode", "bogus", "--out", &d]), 2);
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(cli(&["train", "--train", &format!("{d}/missing.jsonl"), "--out", &d]), 3);
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\":\"a\",\"text\":\"x\",\"toxicity\":0.5}\nnot json\n").unwrap();
    assert_eq!(cli(&["train", "--train", &format!("{d}/bad.jsonl"), "--out", &d]), 3);
}

#[test]
fn numeric_blowup_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(cli(&["synth", "--size", "40", "--seed", "1", "--out", &d]), 0);
    let code = cli(&[
        "train", "--train", &format!("{d}/synth.jsonl"), "--learning-rate", "1e300", "--epochs", "3", "--d", "8",
        "--layers", "1", "--out", &d,
    ]);
    assert_eq!(code, 4);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_spanmax");
    let out = Command::new(bin).args(["eval", "--test", "/nonexistent/test.jsonl", "--predictions", "/nonexistent/p.jsonl"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/test.jsonl"));
    assert_eq!(Command::new(bin).arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn curate_scales_and_records_strata() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let span_dir = dir.path().join("span");
    let scored_dir = dir.path().join("scored");
    assert_eq!(cli(&["synth", "--term-counts", "idiot=30,trash=25", "--id-prefix", "s", "--seed", "1", "--out", &s(&span_dir)]), 0);
    assert_eq!(
        cli(&["synth", "--size", "4000", "--context-rate", "0.5", "--span-fraction", "0", "--id-prefix", "c", "--seed", "2", "--out", &s(&scored_dir)]),
        0
    );
    let corpus = format!("{}/synth.jsonl", s(&scored_dir));
    let spans = format!("{}/synth.jsonl", s(&span_dir));

    assert_eq!(cli(&["curate", "--corpus", &corpus, "--out", &d]), 2);
    assert_eq!(cli(&["curate", "--corpus", &corpus, "--span-corpus", &spans, "--scale", "0.01", "--out", &d]), 0);
    let m = manifest(dir.path(), "curate");
    assert_eq!(m.summary["strata"]["span_toxic"], 30);
    assert_eq!(m.summary["strata"]["non_toxic"], 70);
    assert_eq!(m.summary["train_size"].as_u64().unwrap() + m.summary["test_size"].as_u64().unwrap(), 300);
    assert_eq!(m.inputs.len(), 2);
    assert!(dir.path().join("terms.tsv").exists());

    // Too large a scale for the pools surfaces the shortfall.
    assert_eq!(cli(&["curate", "--corpus", &corpus, "--span-corpus", &spans, "--scale", "0.1", "--out", &d]), 3);
}

#[test]
fn train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let d = s(dir.path());
    for f in ["model.spmx", "vocab.tsv", "metrics.csv", "manifest.train.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,L,L_C,L_S,val_macro_f1");
    assert_eq!(csv.lines().count(), 3);
    let m = manifest(dir.path(), "train");
    assert_eq!((m.config["mode"].as_str(), m.config["epochs"].as_str(), m.seed), ("mt", "2", 1));

    assert_eq!(cli(&["train", "--mode", "lr", "--train", &format!("{d}/train.jsonl"), "--out", &d]), 0);
    let test = format!("{d}/test.jsonl");
    let code = cli(&[
        "eval", "--test", &test, "--checkpoint", &format!("{d}/model.spmx"), "--vocab", &format!("{d}/vocab.tsv"),
        "--lr-model", &format!("{d}/lr_model.tsv"), "--out", &d,
    ]);
    assert_eq!(code, 0);
    let r = report(dir.path());
    assert_eq!(r["systems"].as_array().unwrap().len(), 2);
    assert_eq!(r["systems"][1]["name"], "LR");
    assert_eq!(r["systems"][0]["spans"]["posts"], 50);
    assert!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("SD-F1"));
}

#[test]
fn vocab_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let d = s(dir.path());
    let other = dir.path().join("other.tsv");
    let vocab = std::fs::read_to_string(dir.path().join("vocab.tsv")).unwrap();
    std::fs::write(&other, vocab.lines().take(10).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let code = cli(&[
        "eval", "--test", &format!("{d}/test.jsonl"), "--checkpoint", &format!("{d}/model.spmx"), "--vocab", &s(&other),
        "--out", &d,
    ]);
    assert_eq!(code, 3);
}

#[test]
fn oracle_predictions_score_perfectly_and_skip_flag_changes_the_span_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    assert_eq!(cli(&["synth", "--size", "60", "--seed", "9", "--out", &d]), 0);
    let corpus = spanmax::corpus::load_jsonl(dir.path().join("synth.jsonl")).unwrap();
    let mut lines = String::new();
    for p in &corpus.posts {
        let gold = spanmax::span::spans_to_char_set(p.spans.as_deref().unwrap());
        let tokens = tokenize(&p.text)
            .into_iter()
            .map(|t| TokenScore {
                score: if gold.contains(&t.start) { 1.0 } else { 0.0 },
                surface: t.surface,
                start: t.start,
                end: t.end,
            })
            .collect();
        let rec = PredictionRecord { id: p.id.clone(), label: p.label as u8, score: 0.0, tokens, explanation: vec![] };
        lines.push_str(&serde_json::to_string(&rec).unwrap());
        lines.push('\n');
    }
    let preds = dir.path().join("oracle.jsonl");
    std::fs::write(&preds, lines).unwrap();
    let test = format!("{d}/synth.jsonl");

    assert_eq!(cli(&["eval", "--test", &test, "--predictions", &s(&preds), "--out", &d]), 0);
    let r = report(dir.path());
    assert_eq!(r["systems"][0]["classification"]["macro_f1"], 1.0);
    assert_eq!(r["systems"][0]["spans"]["f1"], 1.0);
    let all = r["systems"][0]["spans"]["posts"].as_u64().unwrap();

    assert_eq!(cli(&["eval", "--test", &test, "--predictions", &s(&preds), "--skip-empty-gold", "--out", &d]), 0);
    let skipped = report(dir.path())["systems"][0]["spans"]["posts"].as_u64().unwrap();
    let toxic = corpus.posts.iter().filter(|p| p.label.is_toxic()).count() as u64;
    assert_eq!(all, 60);
    assert_eq!(skipped, toxic);
}

#[test]
fn explain_writes_reports_and_a_blinding_key() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let d = s(dir.path());
    assert_eq!(cli(&["train", "--mode", "lr", "--train", &format!("{d}/train.jsonl"), "--out", &d]), 0);
    let code = cli(&[
        "explain", "--checkpoint", &format!("{d}/model.spmx"), "--vocab", &format!("{d}/vocab.tsv"), "--input",
        &format!("{d}/test.jsonl"), "--text", "you are such an idiot", "--lr-model", &format!("{d}/lr_model.tsv"),
        "--quiet", "--out", &d,
    ]);
    assert_eq!(code, 0);
    let html = std::fs::read_to_string(dir.path().join("explain.html")).unwrap();
    let texts: Vec<String> = html
        .match_indices("<p class=\"post-text\">")
        .filter_map(|(i, _)| spanmax::render::text_from_html(&html[i..]))
        .collect();
    assert_eq!(texts.len(), 51);
    assert!(texts.iter().any(|t| t == "you are such an idiot"));
    let records = std::fs::read_to_string(dir.path().join("explain.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 51);
    let key: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("side_by_side_key.json")).unwrap()).unwrap();
    assert_eq!(key.as_array().unwrap().len(), 51);
    let side = std::fs::read_to_string(dir.path().join("side_by_side.html")).unwrap();
    assert!(!side.contains("neural") && !side.contains(">LR"));
}

#[test]
fn config_file_feeds_settings_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# synthetic corpus\nsize = 30\nseed = 5\n").unwrap();
    assert_eq!(cli(&["synth", "--config", &s(&cfg), "--out", &d]), 0);
    let m = manifest(dir.path(), "synth");
    assert_eq!((m.seed, m.config["size"].as_str()), (5, "30"));
    let first = std::fs::read(dir.path().join("synth.jsonl")).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 30);

    assert_eq!(cli(&["synth", "--config", &s(&cfg), "--size", "12", "--out", &d]), 0);
    assert_eq!(manifest(dir.path(), "synth").config["size"], "12");

    // Same settings again reproduce the same output.
    assert_eq!(cli(&["synth", "--config", &s(&cfg), "--out", &d]), 0);
    assert_eq!(std::fs::read(dir.path().join("synth.jsonl")).unwrap(), first);
}
