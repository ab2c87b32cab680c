//! Acceptance suite: one line per criterion, non-zero exit if any hard
//! criterion fails. Criterion 6 is report-only.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanmax::baseline::{explain_lr, predict_lr_label, stem, train_lr, LrConfig, LrModel};
use spanmax::corpus::synth::{generate_synthetic, generate_with_term_counts, SynthConfig};
use spanmax::corpus::{build_toxic_term_list, curate, CurationConfig};
use spanmax::encoder::EncoderConfig;
use spanmax::gradcheck::finite_diff_check;
use spanmax::head::Thresholds;
use spanmax::metrics::sd_prf;
use spanmax::params::Parameters;
use spanmax::render::{html_report, text_from_html, Highlight};
use spanmax::tokenizer::{build_vocab, tokenize, TokenizedPost};
use spanmax::training::{batch_loss, classification_loss, joint_loss, load_checkpoint, loss_and_grad, save_checkpoint, span_loss, Objective};
use spanmax::{CharSet, Model, Pooling};

const METRIC_PAIRS: usize = 1000;
const METRIC_BUDGET: Duration = Duration::from_secs(5);
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_COORDS: usize = 200;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const MAXPOOL_TRIALS: usize = 1000;
const LOSS_IDENTITY_TOLERANCE: f64 = 1e-12;
const E2E_MACRO_F1: f64 = 0.95;
const E2E_SD_F1: f64 = 0.85;
const E2E_EPOCHS: &str = "20";
const E2E_BUDGET: Duration = Duration::from_secs(300);
const LR_TRAIN_ACCURACY: f64 = 0.95;
const LR_EXPLAIN_TRIALS: usize = 500;
const EXPLAIN_POSTS: usize = 200;

enum Outcome {
    Pass(String),
    Fail(String),
    Report(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn cli(args: &[&str]) -> i32 {
    spanmax_cli::main_with_args(std::iter::once("spanmax").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn report_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, len: usize) -> CharSet {
    if rng.random_range(0..4) == 0 {
        return CharSet::new();
    }
    let density = rng.random::<f64>();
    (0..len).filter(|_| rng.random_bool(density)).collect()
}

/// Direct transcription of the definitions over boolean masks.
fn brute_force_prf(gold: &CharSet, system: &CharSet, len: usize) -> (f64, f64, f64) {
    let g: Vec<bool> = (0..len).map(|i| gold.contains(&i)).collect();
    let a: Vec<bool> = (0..len).map(|i| system.contains(&i)).collect();
    let ng = g.iter().filter(|&&x| x).count();
    let na = a.iter().filter(|&&x| x).count();
    if ng == 0 && na == 0 {
        return (1.0, 1.0, 1.0);
    }
    if ng == 0 || na == 0 {
        return (0.0, 0.0, 0.0);
    }
    let both = (0..len).filter(|&i| g[i] && a[i]).count();
    let p = both as f64 / na as f64;
    let r = both as f64 / ng as f64;
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs: Vec<(CharSet, CharSet, usize)> = vec![
        (CharSet::new(), CharSet::new(), 0),
        (CharSet::new(), CharSet::from([3]), 5),
        (CharSet::from([3]), CharSet::new(), 5),
    ];
    while pairs.len() < METRIC_PAIRS {
        let len = rng.random_range(0..=50);
        pairs.push((random_set(&mut rng, len), random_set(&mut rng, len), len));
    }
    let mut mismatches = 0;
    let mut degenerate = 0;
    for (g, a, len) in &pairs {
        degenerate += usize::from(g.is_empty() || a.is_empty());
        let got = sd_prf(g, a);
        mismatches += usize::from((got.precision, got.recall, got.f1) != brute_force_prf(g, a, *len));
    }
    let t = start.elapsed();
    check(
        mismatches == 0 && t < METRIC_BUDGET,
        format!("{mismatches} mismatches over {} pairs ({degenerate} with an empty side), {t:.2?}", pairs.len()),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = EncoderConfig { d: 16, layers: 2, heads: 2, ffn_width: 32, max_len: 8, ..EncoderConfig::new(20) };
    let model = Model::new(&cfg, Pooling::Max, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut post = |labeled: bool, label: f64| {
        let ids: Vec<usize> = (0..6).map(|_| rng.random_range(2..20)).collect();
        TokenizedPost {
            post_id: String::new(),
            tokens: Vec::new(),
            token_labels: labeled.then(|| (0..6).map(|i| f64::from(u8::from(i == 2))).collect()),
            ids,
            label,
        }
    };
    let batch = vec![post(true, 1.0), post(true, 0.0), post(false, 1.0)];
    let objective = Objective::Joint { lambda: 0.5 };
    let (_, grads) = loss_and_grad(&batch, &model, objective).unwrap();
    let theta = model.to_flat();
    let loss = |t: &[f64]| {
        let mut m = model.clone();
        m.set_flat(t).unwrap();
        batch_loss(&batch, &m, objective).unwrap().total
    };
    let err = finite_diff_check(loss, &theta, &grads.to_flat(), GRAD_STEP, GRAD_COORDS, 7);
    let t = start.elapsed();
    check(
        err < GRAD_TOLERANCE && t < GRAD_BUDGET,
        format!("max relative error {err:.2e} on {GRAD_COORDS} of {} coordinates (limit {GRAD_TOLERANCE:e}), {t:.2?}", theta.len()),
    )
}

fn max_pool_contract() -> Outcome {
    let corpus = generate_synthetic(&SynthConfig { size: MAXPOOL_TRIALS, ..SynthConfig::default() }, 8).unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = EncoderConfig { d: 8, layers: 1, heads: 2, ffn_width: 16, max_len: 32, ..EncoderConfig::new(vocab.len()) };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = Model::new(&cfg, Pooling::Max, 0).unwrap();
    let (mut violations, mut toxic) = (0, 0);
    for (i, post) in corpus.posts.iter().enumerate() {
        if i % 100 == 0 {
            // Fresh weights now and then; the bias shift spreads scores
            // across the threshold.
            model = Model::new(&cfg, Pooling::Max, i as u64).unwrap();
            model.head.bias[0] = rng.random_range(-1.0..1.0);
        }
        let tau = rng.random_range(0.3..0.7);
        let p = model.predict(&post.text, &vocab, Thresholds { classification: tau, span: tau }).unwrap();
        let exact = p.token_scores.iter().any(|x| x.to_bits() == p.sequence_score.to_bits());
        let dominates = p.token_scores.iter().all(|&x| x <= p.sequence_score);
        let any_above = p.token_scores.iter().any(|&x| x >= tau);
        toxic += usize::from(p.label.is_toxic());
        if !(exact && dominates && p.label.is_toxic() == any_above && p.predicted_chars.is_empty() != any_above) {
            violations += 1;
        }
    }
    check(violations == 0, format!("{violations} violations over {MAXPOOL_TRIALS} predictions ({toxic} labeled toxic)"))
}

fn loss_identities() -> Outcome {
    let corpus = generate_synthetic(&SynthConfig { size: 200, ..SynthConfig::default() }, 10).unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let posts: Vec<TokenizedPost> = corpus
        .posts
        .iter()
        .map(|p| TokenizedPost::from_post(p, &vocab, 64).unwrap())
        .filter(|p| p.token_labels.is_some())
        .collect();
    let cfg = EncoderConfig { d: 8, layers: 1, heads: 2, ffn_width: 16, max_len: 64, ..EncoderConfig::new(vocab.len()) };
    let mut worst = 0.0f64;
    let mut bit_mismatches = 0;
    let mut batches = 0;
    for (seed, batch) in posts.chunks(8).enumerate() {
        let model = Model::new(&cfg, Pooling::Max, seed as u64).unwrap();
        let lc = classification_loss(batch, &model).unwrap();
        let ls = span_loss(batch, &model).unwrap();
        let half = joint_loss(batch, &model, 0.5).unwrap();
        worst = worst.max((half.total - (0.5 * lc + 0.5 * ls)).abs());
        let one = joint_loss(batch, &model, 1.0).unwrap();
        bit_mismatches += usize::from(one.total.to_bits() != lc.to_bits());
        batches += 1;
    }
    check(
        worst < LOSS_IDENTITY_TOLERANCE && bit_mismatches == 0,
        format!("{batches} span-labeled batches: max |L - (L_C + L_S)/2| = {worst:.1e}, {bit_mismatches} lambda=1 bit mismatches"),
    )
}

fn synthetic_end_to_end(dir: &Path) -> Outcome {
    let start = Instant::now();
    let d = s(dir);
    let mut codes = vec![cli(&["synth", "--size", "2500", "--test-size", "500", "--seed", "1", "--out", d])];
    codes.push(cli(&[
        "train", "--train", &format!("{d}/train.jsonl"), "--mode", "mt", "--epochs", E2E_EPOCHS, "--seed", "1", "--out", d,
    ]));
    let trained = start.elapsed();
    codes.push(cli(&[
        "eval", "--test", &format!("{d}/test.jsonl"), "--checkpoint", &format!("{d}/model.spmx"), "--vocab",
        &format!("{d}/vocab.tsv"), "--out", d,
    ]));
    if codes.iter().any(|&c| c != 0) {
        return Outcome::Fail(format!("command exit codes {codes:?}"));
    }
    let r = report_json(dir);
    let sys = &r["systems"][0];
    let f1 = sys["classification"]["macro_f1"].as_f64().unwrap();
    let sd = sys["spans"]["f1"].as_f64().unwrap();
    check(
        f1 >= E2E_MACRO_F1 && sd >= E2E_SD_F1 && trained < E2E_BUDGET,
        format!("test macro-F1 {f1:.3} (>= {E2E_MACRO_F1}), SD-F1 {sd:.3} (>= {E2E_SD_F1}), training {trained:.1?} for {E2E_EPOCHS} epochs"),
    )
}

fn context_slice(dir: &Path) -> Outcome {
    let d = s(dir);
    let codes = [
        cli(&["synth", "--size", "2500", "--test-size", "500", "--context-rate", "1", "--seed", "2", "--out", d]),
        cli(&["train", "--train", &format!("{d}/train.jsonl"), "--epochs", E2E_EPOCHS, "--seed", "1", "--out", d]),
        cli(&["train", "--mode", "lr", "--train", &format!("{d}/train.jsonl"), "--seed", "1", "--out", d]),
        cli(&[
            "eval", "--test", &format!("{d}/test.jsonl"), "--checkpoint", &format!("{d}/model.spmx"), "--vocab",
            &format!("{d}/vocab.tsv"), "--lr-model", &format!("{d}/lr_model.tsv"), "--out", d,
        ]),
    ];
    if codes.iter().any(|&c| c != 0) {
        return Outcome::Report(format!("could not run the comparison, exit codes {codes:?}"));
    }
    let r = report_json(dir);
    let mt = r["systems"][0]["classification"]["macro_f1"].as_f64().unwrap();
    let lr = r["systems"][1]["classification"]["macro_f1"].as_f64().unwrap();
    let direction = if mt > lr { "MT ahead" } else { "MT not ahead" };
    Outcome::Report(format!("context-rule slice macro-F1: MT {mt:.3}, LR {lr:.3}, gap {:+.3} ({direction})", mt - lr))
}

/// Recomputes the explanation from scratch: a word is marked when its own
/// stem, or its pair with a neighboring word, has positive weight.
fn brute_force_explanation(model: &LrModel, text: &str) -> CharSet {
    let tokens = tokenize(text);
    let words: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].is_word()).collect();
    let stems: Vec<String> = words.iter().map(|&i| stem(&tokens[i].surface)).collect();
    let positive = |f: String| model.weight(&f).is_some_and(|w| w > 0.0);
    let mut out = CharSet::new();
    for k in 0..words.len() {
        let left = k > 0 && positive(format!("{}_{}", stems[k - 1], stems[k]));
        let right = k + 1 < words.len() && positive(format!("{}_{}", stems[k], stems[k + 1]));
        if positive(stems[k].clone()) || left || right {
            out.extend(tokens[words[k]].start..tokens[words[k]].end);
        }
    }
    out
}

fn lr_baseline() -> Outcome {
    let corpus = generate_synthetic(&SynthConfig { size: 1000, ..SynthConfig::default() }, 11).unwrap();
    let model = train_lr(&corpus, &LrConfig::default()).unwrap();
    let correct = corpus.posts.iter().filter(|p| predict_lr_label(&model, &p.text) == p.label).count();
    let accuracy = correct as f64 / corpus.len() as f64;

    let norms: Vec<f64> = [0.001, 0.1, 10.0]
        .iter()
        .map(|&l2| train_lr(&corpus, &LrConfig { l2, ..LrConfig::default() }).unwrap().weight_norm())
        .collect();
    let shrinking = norms.windows(2).all(|w| w[0] > w[1]);

    let words = ["you", "idiot", "idiots", "brown", "man", "is", "nice", "followers", "the", "trash"];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..LR_EXPLAIN_TRIALS {
        let mut weights: Vec<(String, f64)> = Vec::new();
        for a in words {
            weights.push((stem(a), rng.random_range(-1.0..1.0)));
            if rng.random_bool(0.2) {
                let b = words.choose(&mut rng).unwrap();
                weights.push((format!("{}_{}", stem(a), stem(b)), rng.random_range(-1.0..1.0)));
            }
        }
        weights.sort_by(|a, b| a.0.cmp(&b.0));
        weights.dedup_by(|a, b| a.0 == b.0);
        let m = LrModel::from_weights(weights, 0.0, 0.0);
        let n = rng.random_range(0..8);
        let text: Vec<&str> = (0..n)
            .map(|_| if rng.random_bool(0.15) { "," } else { words.choose(&mut rng).unwrap() })
            .collect();
        let text = text.join(" ");
        mismatches += usize::from(explain_lr(&m, &text).chars != brute_force_explanation(&m, &text));
    }
    check(
        accuracy >= LR_TRAIN_ACCURACY && shrinking && mismatches == 0,
        format!(
            "training accuracy {accuracy:.3} (>= {LR_TRAIN_ACCURACY}); |w| over l2 {{0.001, 0.1, 10}} = [{:.3}, {:.3}, {:.3}]; {mismatches}/{LR_EXPLAIN_TRIALS} explanation mismatches",
            norms[0], norms[1], norms[2]
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let d = s(dir);
    let (a, b) = (dir.join("a"), dir.join("b"));
    let mut codes = vec![cli(&["synth", "--size", "300", "--seed", "3", "--out", d])];
    for out in [&a, &b] {
        codes.push(cli(&[
            "train", "--train", &format!("{d}/synth.jsonl"), "--mode", "mt", "--lambda", "0.5", "--seed", "1",
            "--epochs", "3", "--d", "16", "--out", s(out),
        ]));
    }
    if codes.iter().any(|&c| c != 0) {
        return Outcome::Fail(format!("command exit codes {codes:?}"));
    }
    let bytes_a = std::fs::read(a.join("model.spmx")).unwrap();
    let identical = bytes_a == std::fs::read(b.join("model.spmx")).unwrap();
    let ckpt = load_checkpoint(a.join("model.spmx")).unwrap();
    save_checkpoint(&ckpt, dir.join("again.spmx")).unwrap();
    let round_trip = std::fs::read(dir.join("again.spmx")).unwrap() == bytes_a
        && load_checkpoint(dir.join("again.spmx")).unwrap() == ckpt;
    check(
        identical && round_trip,
        format!("two seeded runs identical: {identical}; save/load bitwise: {round_trip} ({} bytes)", bytes_a.len()),
    )
}

fn curation() -> Outcome {
    let counts = [("alpha", 19), ("beta", 20), ("gamma", 21)].map(|(t, n)| (t.to_string(), n));
    let engineered = generate_with_term_counts(&counts, &SynthConfig::default(), 4).unwrap();
    let list = build_toxic_term_list(&engineered, 20).unwrap();
    let boundary = list.count("alpha").is_none() && list.count("beta") == Some(20) && list.count("gamma") == Some(21);

    let span_counts = [("idiot", 30), ("trash", 25)].map(|(t, n)| (t.to_string(), n));
    let span = generate_with_term_counts(&span_counts, &SynthConfig { id_prefix: "s".into(), ..SynthConfig::default() }, 1).unwrap();
    let scored = generate_synthetic(
        &SynthConfig { size: 4000, context_rate: 0.5, span_annotated_fraction: 0.0, id_prefix: "c".into(), ..SynthConfig::default() },
        2,
    )
    .unwrap();
    let cfg = CurationConfig::default().scaled(300.0 / 30000.0);
    let out = curate(&scored, &span, &cfg).unwrap();
    let expected = [
        ("ambiguous", cfg.ambiguous),
        ("extra_toxic", cfg.extra_toxic),
        ("highly_toxic", cfg.highly_toxic - cfg.span_toxic),
        ("non_toxic", cfg.non_toxic),
        ("span_toxic", cfg.span_toxic),
    ];
    let strata_match = expected.iter().all(|(k, v)| out.strata.get(*k) == Some(v));
    let total = out.train.len() + out.test.len();
    check(
        boundary && strata_match && total == 300,
        format!("term counts 19/20/21 -> {:?}/{:?}/{:?}; strata {:?}; {total} posts", list.count("alpha"), list.count("beta"), list.count("gamma"), out.strata),
    )
}

fn explanation_surface() -> Outcome {
    let corpus = generate_synthetic(&SynthConfig { size: 600, ..SynthConfig::default() }, 13).unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = spanmax::training::TrainConfig {
        epochs: 3,
        seed: 4,
        encoder: EncoderConfig { d: 16, layers: 1, heads: 2, ffn_width: 32, max_len: 64, ..EncoderConfig::new(0) },
        ..Default::default()
    };
    let model = spanmax::training::train(&corpus, None, &vocab, &cfg, None).unwrap().checkpoint.model;
    let texts = generate_synthetic(&SynthConfig { size: EXPLAIN_POSTS, ..SynthConfig::default() }, 14).unwrap();
    let (mut word_argmax, mut top_mismatch, mut text_mismatch) = (0, 0, 0);
    for post in &texts.posts {
        let p = model.predict(&post.text, &vocab, Thresholds::default()).unwrap();
        if p.tokens[p.argmax].is_word() {
            word_argmax += 1;
            top_mismatch += usize::from(p.explanation.first().map(|w| w.score.to_bits()) != Some(p.sequence_score.to_bits()));
        }
        let html = html_report(&[Highlight::from_prediction(&post.id, &post.text, &p)]);
        text_mismatch += usize::from(text_from_html(&html).as_deref() != Some(post.text.as_str()));
    }
    check(
        top_mismatch == 0 && text_mismatch == 0 && word_argmax > 0,
        format!(
            "{EXPLAIN_POSTS} posts: {top_mismatch}/{word_argmax} top-1 score mismatches where the argmax is a word; {text_mismatch} HTML reconstruction mismatches"
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("metric oracle equivalence", Box::new(metric_oracle)),
        ("gradient correctness", Box::new(gradient_check)),
        ("max-pool contract", Box::new(max_pool_contract)),
        ("joint loss identities", Box::new(loss_identities)),
        ("synthetic end-to-end", Box::new(|| synthetic_end_to_end(&sub("e2e")))),
        ("context-rule comparison", Box::new(|| context_slice(&sub("context")))),
        ("logistic regression baseline", Box::new(lr_baseline)),
        ("determinism", Box::new(|| determinism(&sub("determinism")))),
        ("curation", Box::new(curation)),
        ("explanation surface", Box::new(explanation_surface)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Report(d) => ("REPORT", d),
        };
        println!("criterion {:>2} [{tag}] {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all hard acceptance criteria passed");
}
