use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spanmax::baseline::{explain_lr, predict_lr, train_lr, LrConfig, LrModel};
use spanmax::corpus::synth::{generate_synthetic, generate_with_term_counts, SynthConfig};
use spanmax::corpus::{curate as curate_corpus, load_jsonl, save_jsonl, CurationConfig};
use spanmax::encoder::{Arch, EncoderConfig};
use spanmax::head::{top_k_explanation, PredictionRecord, Thresholds};
use spanmax::metrics::{classification_report, classification_table, sd_average, sd_prf, span_table, ClassificationReport, SpanEvalResult};
use spanmax::render::{ansi, html_report, side_by_side, Highlight};
use spanmax::span::spans_to_char_set;
use spanmax::tokenizer::build_vocab;
use spanmax::training::{load_checkpoint, metrics_csv, save_checkpoint, train_with_progress, TrainConfig, TrainMode};
use spanmax::{CharSet, Corpus, Label, Model, Vocab};

use crate::manifest::{Recorder, RunManifest};
use crate::settings::Settings;
use crate::{CliError, CurateArgs, EvalArgs, ExplainArgs, SynthArgs, TrainArgs};

pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub settings: Settings,
}

type Result<T> = std::result::Result<T, CliError>;

fn load_corpus(path: &Path) -> Result<Corpus> {
    load_jsonl(path).map_err(|e| match e {
        spanmax::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Posts of `a`, then posts of `b` whose id is not in `a`.
fn union(a: &Corpus, b: Option<&Corpus>) -> Corpus {
    let mut posts = a.posts.clone();
    if let Some(b) = b {
        let seen: HashSet<&str> = a.posts.iter().map(|p| p.id.as_str()).collect();
        posts.extend(b.posts.iter().filter(|p| !seen.contains(p.id.as_str())).cloned());
    }
    Corpus { posts, role: a.role }
}

fn load_neural(checkpoint: &Path, vocab: &Path, rec: &mut Recorder) -> Result<(Model, Vocab)> {
    rec.input(checkpoint)?;
    rec.input(vocab)?;
    let ckpt = load_checkpoint(checkpoint).map_err(|e| match e {
        spanmax::Error::Io(io) => CliError::io(checkpoint, io),
        other => other.into(),
    })?;
    let vocab_file = Vocab::from_tsv(&read_text(vocab)?)?;
    if ckpt.vocab_hash != vocab_file.hash() {
        return Err(spanmax::Error::Data(format!(
            "vocabulary {} (hash {}) does not match the one the checkpoint was trained with (hash {})",
            vocab.display(),
            vocab_file.hash(),
            ckpt.vocab_hash
        ))
        .into());
    }
    Ok((ckpt.model, vocab_file))
}

fn load_lr(path: &Path, rec: &mut Recorder) -> Result<LrModel> {
    rec.input(path)?;
    Ok(LrModel::from_tsv(&read_text(path)?)?)
}

pub fn curate(mut ctx: Context, a: CurateArgs) -> Result<RunManifest> {
    let span_path = a.span_corpus.clone().ok_or_else(|| {
        CliError::Usage(
            "curate needs --span-corpus: the span-annotated posts supply the toxic term list and the \
             span-labeled toxic stratum that multi-task training depends on"
                .into(),
        )
    })?;
    let scale = ctx.settings.get("scale", a.scale, 1.0)?;
    let min_term_count = ctx.settings.get("min_term_count", a.min_term_count, 20)?;
    ctx.settings.finish()?;
    if !(scale > 0.0) {
        return Err(CliError::Usage(format!("--scale must be positive, got {scale}")));
    }

    let mut rec = Recorder::new("curate", &ctx.out)?;
    rec.input(&a.corpus)?;
    rec.input(&span_path)?;
    let corpus = load_corpus(&a.corpus)?;
    let span = load_corpus(&span_path)?;
    let cfg = CurationConfig { seed: ctx.seed, min_term_count, ..CurationConfig::default() }.scaled(scale);
    let out = curate_corpus(&corpus, &span, &cfg)?;

    save_jsonl(&out.train, rec.output("train.jsonl"))?;
    save_jsonl(&out.test, rec.output("test.jsonl"))?;
    rec.write("terms.tsv", out.terms.to_tsv())?;
    for (name, n) in &out.strata {
        eprintln!("{name:>12}: {n}");
    }
    eprintln!("train {} / test {}; {} toxic terms", out.train.len(), out.test.len(), out.terms.len());
    rec.summary.insert("strata".into(), serde_json::json!(out.strata));
    rec.summary.insert("train_size".into(), out.train.len().into());
    rec.summary.insert("test_size".into(), out.test.len().into());
    rec.summary.insert("curation".into(), serde_json::to_value(&cfg).expect("config serializes"));
    rec.finish(ctx.settings.snapshot, ctx.seed)
}

pub fn train(mut ctx: Context, a: TrainArgs) -> Result<RunManifest> {
    let mode = ctx.settings.get("mode", a.mode.clone(), "mt".to_string())?;
    if mode == "lr" {
        return train_baseline(ctx, a);
    }
    let mode = TrainMode::parse(&mode)?;
    let s = &mut ctx.settings;
    let defaults = TrainConfig::default();
    let enc_default = defaults.encoder;
    let arch = Arch::parse(&s.get("arch", a.arch, enc_default.arch.name().to_string())?)?;
    let cfg = TrainConfig {
        lambda: s.get("lambda", a.lambda, defaults.lambda)?,
        learning_rate: s.get("learning_rate", a.learning_rate, defaults.learning_rate)?,
        epochs: s.get("epochs", a.epochs, defaults.epochs)?,
        batch_size: s.get("batch_size", a.batch_size, defaults.batch_size)?,
        seed: ctx.seed,
        mode,
        encoder: EncoderConfig {
            vocab_size: 0,
            d: s.get("d", a.d, enc_default.d)?,
            layers: s.get("layers", a.layers, enc_default.layers)?,
            heads: s.get("heads", a.heads, enc_default.heads)?,
            ffn_width: s.get("ffn_width", a.ffn_width, enc_default.ffn_width)?,
            max_len: s.get("max_len", a.max_len, enc_default.max_len)?,
            arch,
        },
        patience: s.get_opt("patience", a.patience)?,
    };
    let min_freq = s.get("min_freq", a.min_freq, 1usize)?;
    s.finish()?;

    let mut rec = Recorder::new("train", &ctx.out)?;
    rec.input(&a.train)?;
    let train = load_corpus(&a.train)?;
    let span = match &a.span {
        Some(p) => {
            rec.input(p)?;
            Some(load_corpus(p)?)
        }
        None => None,
    };
    let validation = match &a.validation {
        Some(p) => {
            rec.input(p)?;
            Some(load_corpus(p)?)
        }
        None => None,
    };
    let vocab = build_vocab(&union(&train, span.as_ref()), min_freq)?;
    rec.write("vocab.tsv", vocab.to_tsv())?;

    let outcome = train_with_progress(&train, span.as_ref(), &vocab, &cfg, validation.as_ref(), |m| {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "epoch {:>3}  L {:.4}  L_C {:.4}  L_S {}  val macro-F1 {}",
            m.epoch,
            m.loss,
            m.classification,
            opt(m.span),
            opt(m.val_macro_f1)
        );
    })?;
    save_checkpoint(&outcome.checkpoint, rec.output("model.spmx"))?;
    rec.write("metrics.csv", metrics_csv(&outcome.log))?;
    rec.summary.insert("best_epoch".into(), outcome.best_epoch.into());
    rec.summary.insert("steps".into(), outcome.checkpoint.step.into());
    rec.summary.insert("vocab_size".into(), vocab.len().into());
    rec.finish(ctx.settings.snapshot, ctx.seed)
}

fn train_baseline(mut ctx: Context, a: TrainArgs) -> Result<RunManifest> {
    let s = &mut ctx.settings;
    let d = LrConfig::default();
    let cfg = LrConfig {
        l2: s.get("l2", a.l2, d.l2)?,
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        learning_rate: s.get("learning_rate", a.learning_rate, d.learning_rate)?,
        seed: ctx.seed,
    };
    s.finish()?;
    let mut rec = Recorder::new("train", &ctx.out)?;
    rec.input(&a.train)?;
    let train = load_corpus(&a.train)?;
    let span = match &a.span {
        Some(p) => {
            rec.input(p)?;
            Some(load_corpus(p)?)
        }
        None => None,
    };
    let model = train_lr(&union(&train, span.as_ref()), &cfg)?;
    rec.write("lr_model.tsv", model.to_tsv())?;
    eprintln!("logistic regression: {} features, |w| = {:.4}", model.num_features(), model.weight_norm());
    rec.summary.insert("features".into(), model.num_features().into());
    rec.finish(ctx.settings.snapshot, ctx.seed)
}

/// One system's predictions over the test set.
struct SystemOutput {
    name: String,
    labels: Vec<Label>,
    chars: Vec<CharSet>,
}

#[derive(Serialize)]
struct SystemReport {
    name: String,
    classification: ClassificationReport,
    spans: Option<SpanSummary>,
}

#[derive(Serialize)]
struct SpanSummary {
    precision: f64,
    recall: f64,
    f1: f64,
    posts: usize,
}

#[derive(Serialize)]
struct EvalReport {
    test: String,
    skip_empty_gold: bool,
    systems: Vec<SystemReport>,
}

fn neural_outputs(model: &Model, vocab: &Vocab, test: &Corpus, t: Thresholds) -> Result<SystemOutput> {
    let preds: Vec<(Label, CharSet)> = test
        .posts
        .par_iter()
        .map(|p| match model.predict(&p.text, vocab, t) {
            Ok(pred) => Ok((pred.label, pred.predicted_chars)),
            Err(spanmax::Error::Empty(_)) => Ok((Label::NonToxic, CharSet::new())),
            Err(e) => Err(e),
        })
        .collect::<spanmax::Result<_>>()?;
    let (labels, chars) = preds.into_iter().unzip();
    Ok(SystemOutput { name: format!("neural ({})", model.pooling.name()), labels, chars })
}

fn lr_outputs(model: &LrModel, test: &Corpus, tau_cls: f64) -> SystemOutput {
    let (labels, chars) = test
        .posts
        .par_iter()
        .map(|p| (Label::from_bool(predict_lr(model, &p.text) >= tau_cls), explain_lr(model, &p.text).chars))
        .unzip();
    SystemOutput { name: "LR".into(), labels, chars }
}

fn record_outputs(path: &Path, test: &Corpus, tau_span: f64) -> Result<SystemOutput> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut by_id = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| spanmax::Error::Parse {
            source_name: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        by_id.insert(rec.id.clone(), rec);
    }
    let mut labels = Vec::with_capacity(test.len());
    let mut chars = Vec::with_capacity(test.len());
    for p in &test.posts {
        let rec = by_id.get(&p.id).ok_or_else(|| {
            spanmax::Error::Data(format!("{} has no prediction for post `{}`", path.display(), p.id))
        })?;
        labels.push(Label::from_bool(rec.label == 1));
        chars.push(rec.predicted_chars(tau_span));
    }
    Ok(SystemOutput { name: "predictions".into(), labels, chars })
}

pub fn eval(mut ctx: Context, a: EvalArgs) -> Result<RunManifest> {
    let s = &mut ctx.settings;
    let thresholds = Thresholds {
        classification: s.get("tau_cls", a.tau_cls, 0.5)?,
        span: s.get("tau_span", a.tau_span, 0.5)?,
    };
    let skip_flag = s.get_opt("skip_empty_gold", a.skip_empty_gold.then_some(true))?;
    let skip_empty_gold = skip_flag.unwrap_or(false);
    s.note("skip_empty_gold", skip_empty_gold);
    s.finish()?;
    if a.checkpoint.is_none() && a.lr_model.is_none() && a.predictions.is_none() {
        return Err(CliError::Usage("eval needs at least one of --checkpoint, --lr-model, --predictions".into()));
    }

    let mut rec = Recorder::new("eval", &ctx.out)?;
    rec.input(&a.test)?;
    let test = load_corpus(&a.test)?;
    if test.is_empty() {
        return Err(spanmax::Error::Empty(format!("{} has no posts", a.test.display())).into());
    }
    let mut systems = Vec::new();
    if let Some(ckpt) = &a.checkpoint {
        let vocab = a.vocab.as_ref().ok_or_else(|| CliError::Usage("--checkpoint needs --vocab".into()))?;
        let (model, vocab) = load_neural(ckpt, vocab, &mut rec)?;
        systems.push(neural_outputs(&model, &vocab, &test, thresholds)?);
    }
    if let Some(path) = &a.lr_model {
        let model = load_lr(path, &mut rec)?;
        systems.push(lr_outputs(&model, &test, thresholds.classification));
    }
    if let Some(path) = &a.predictions {
        rec.input(path)?;
        systems.push(record_outputs(path, &test, thresholds.span)?);
    }

    // Span metrics cover annotated posts only; an empty annotation is an
    // empty gold set.
    let gold_labels: Vec<Label> = test.posts.iter().map(|p| p.label).collect();
    let span_posts: Vec<(usize, CharSet)> = test
        .posts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.spans.as_ref().map(|s| (i, spans_to_char_set(s))))
        .filter(|(_, g)| !(skip_empty_gold && g.is_empty()))
        .collect();

    let mut reports = Vec::new();
    for sys in &systems {
        let classification = classification_report(&gold_labels, &sys.labels)?;
        let spans = if span_posts.is_empty() {
            None
        } else {
            let r = sd_average(span_posts.iter().map(|(i, g)| sd_prf(g, &sys.chars[*i])).collect())?;
            Some(SpanSummary { precision: r.precision, recall: r.recall, f1: r.f1, posts: span_posts.len() })
        };
        reports.push(SystemReport { name: sys.name.clone(), classification, spans });
    }

    let cls_rows: Vec<(&str, &ClassificationReport)> =
        reports.iter().map(|r| (r.name.as_str(), &r.classification)).collect();
    let mut text = classification_table(&cls_rows);
    let span_results: Vec<(&str, SpanEvalResult)> = reports
        .iter()
        .filter_map(|r| {
            r.spans.as_ref().map(|s| {
                (r.name.as_str(), SpanEvalResult { per_post: Vec::new(), precision: s.precision, recall: s.recall, f1: s.f1 })
            })
        })
        .collect();
    if !span_results.is_empty() {
        let rows: Vec<(&str, &SpanEvalResult)> = span_results.iter().map(|(n, r)| (*n, r)).collect();
        text.push('\n');
        text.push_str(&span_table(&rows));
        text.push_str(&format!("({} span-annotated posts)\n", span_posts.len()));
    }
    print!("{text}");
    rec.write("report.txt", &text)?;
    let report = EvalReport { test: a.test.display().to_string(), skip_empty_gold, systems: reports };
    rec.write("report.json", serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    rec.finish(ctx.settings.snapshot, ctx.seed)
}

fn lr_highlight(model: &LrModel, id: &str, text: &str, k: usize) -> Highlight {
    let e = explain_lr(model, text);
    let mut scores = vec![0.5; e.tokens.len()];
    for w in &e.words {
        scores[w.index] = 1.0 / (1.0 + (-w.contribution).exp());
    }
    Highlight {
        id: id.to_string(),
        text: text.to_string(),
        top: top_k_explanation(&e.tokens, &scores, k),
        tokens: e.tokens,
        scores,
        sequence_score: predict_lr(model, text),
    }
}

pub fn explain(mut ctx: Context, a: ExplainArgs) -> Result<RunManifest> {
    let k = ctx.settings.get("top_k", a.top_k, spanmax::head::DEFAULT_TOP_K)?;
    ctx.settings.finish()?;
    let mut rec = Recorder::new("explain", &ctx.out)?;
    let (model, vocab) = load_neural(&a.checkpoint, &a.vocab, &mut rec)?;
    let mut inputs: Vec<(String, String)> = Vec::new();
    if let Some(path) = &a.input {
        rec.input(path)?;
        inputs.extend(load_corpus(path)?.posts.into_iter().map(|p| (p.id, p.text)));
    }
    inputs.extend(a.text.iter().enumerate().map(|(i, t)| (format!("text{}", i + 1), t.clone())));
    if inputs.is_empty() {
        return Err(CliError::Usage("explain needs --input or --text".into()));
    }

    let mut highlights = Vec::new();
    let mut records = String::new();
    for (id, text) in &inputs {
        let mut p = match model.predict(text, &vocab, Thresholds::default()) {
            Ok(p) => p,
            Err(spanmax::Error::Empty(_)) => {
                eprintln!("skipping `{id}`: no tokens");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        p.explanation = top_k_explanation(&p.tokens, &p.token_scores, k);
        records.push_str(&serde_json::to_string(&p.to_record(id)).expect("record serializes"));
        records.push('\n');
        highlights.push(Highlight::from_prediction(id, text, &p));
    }
    if !a.quiet {
        for h in &highlights {
            println!("{}: {}", h.id, ansi(h));
        }
    }
    rec.write("explain.html", html_report(&highlights))?;
    rec.write("explain.jsonl", records)?;

    if let Some(path) = &a.lr_model {
        let lr = load_lr(path, &mut rec)?;
        let pairs: Vec<(Highlight, Highlight)> = highlights
            .iter()
            .map(|h| (h.clone(), lr_highlight(&lr, &h.id, &h.text, k)))
            .collect();
        let (html, key) = side_by_side(&pairs, ("neural", "lr"), ctx.seed);
        rec.write("side_by_side.html", html)?;
        rec.write("side_by_side_key.json", serde_json::to_string_pretty(&key).expect("key serializes") + "\n")?;
    }
    rec.summary.insert("posts".into(), highlights.len().into());
    rec.finish(ctx.settings.snapshot, ctx.seed)
}

fn parse_term_counts(spec: &str) -> Result<Vec<(String, usize)>> {
    spec.split(',')
        .map(|item| {
            let (t, n) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("term count `{item}` is not `term=count`")))?;
            let n = n.trim().parse().map_err(|_| CliError::Usage(format!("bad count in `{item}`")))?;
            Ok((t.trim().to_string(), n))
        })
        .collect()
}

pub fn synth(mut ctx: Context, a: SynthArgs) -> Result<RunManifest> {
    let s = &mut ctx.settings;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        size: s.get("size", a.size, d.size)?,
        toxic_rate: s.get("toxic_rate", a.toxic_rate, d.toxic_rate)?,
        context_rate: s.get("context_rate", a.context_rate, d.context_rate)?,
        span_annotated_fraction: s.get("span_fraction", a.span_fraction, d.span_annotated_fraction)?,
        id_prefix: s.get("id_prefix", a.id_prefix, d.id_prefix.clone())?,
        ..d
    };
    let test_size = s.get("test_size", a.test_size, 0usize)?;
    let term_counts = s.get_opt("term_counts", a.term_counts)?;
    s.finish()?;

    let mut rec = Recorder::new("synth", &ctx.out)?;
    let corpus = match &term_counts {
        Some(spec) => generate_with_term_counts(&parse_term_counts(spec)?, &cfg, ctx.seed)?,
        None => generate_synthetic(&cfg, ctx.seed)?,
    };
    if test_size == 0 {
        save_jsonl(&corpus, rec.output("synth.jsonl"))?;
    } else {
        if test_size >= corpus.len() {
            return Err(CliError::Usage(format!("--test-size {test_size} leaves no training posts out of {}", corpus.len())));
        }
        let mut train = corpus.posts;
        let test = train.split_off(train.len() - test_size);
        save_jsonl(&Corpus { posts: train, role: corpus.role }, rec.output("train.jsonl"))?;
        save_jsonl(&Corpus { posts: test, role: corpus.role }, rec.output("test.jsonl"))?;
    }
    rec.finish(ctx.settings.snapshot, ctx.seed)
}
