//! Joint training with interleaved span and classification batches.
//!
//! Each epoch shuffles two streams: posts with token labels and posts without.
//! Batches alternate strictly between them, span batch first, and once one
//! stream runs dry the other finishes the epoch. Span batches optimize the
//! joint loss, classification batches the sequence loss alone, and Adam steps
//! after every batch.

pub mod adam;
pub mod checkpoint;
pub mod loss;

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::classification_report;
use crate::model::{Model, Pooling};
use crate::params::Parameters;
use crate::tokenizer::{TokenizedPost, Vocab};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use loss::{
    batch_loss, classification_loss, joint_loss, loss_and_grad, mse, span_loss, LossBreakdown, Objective,
};

/// RNG stream used for batch shuffling, separate from initialization.
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Joint loss on span batches, sequence loss on the rest.
    MultiTask,
    /// Span loss only, on span-labeled posts only.
    SpanOnly,
    /// Mean-pooled sequence classifier, no token supervision.
    ClsStyle,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::MultiTask => "mt",
            TrainMode::SpanOnly => "sp",
            TrainMode::ClsStyle => "cls",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mt" => Ok(TrainMode::MultiTask),
            "sp" => Ok(TrainMode::SpanOnly),
            "cls" => Ok(TrainMode::ClsStyle),
            other => Err(Error::Config(format!("unknown training mode `{other}` (expected mt, sp or cls)"))),
        }
    }

    pub fn pooling(self) -> Pooling {
        match self {
            TrainMode::ClsStyle => Pooling::Mean,
            _ => Pooling::Max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the classification loss in the joint objective.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Architecture; `vocab_size` is taken from the vocabulary at train time.
    pub encoder: EncoderConfig,
    /// Stop after this many epochs without a validation macro-F1 gain and
    /// keep the best epoch. Needs a validation corpus.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            mode: TrainMode::MultiTask,
            encoder: EncoderConfig::new(0),
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Post-weighted mean of the optimized loss over the epoch's batches.
    pub loss: f64,
    pub classification: f64,
    /// Mean span loss over labeled posts; `None` if no batch had any.
    pub span: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,L,L_C,L_S,val_macro_f1\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in log {
        let _ = writeln!(out, "{},{},{},{},{}", m.epoch, m.loss, m.classification, opt(m.span), opt(m.val_macro_f1));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (the last one unless early stopping).
    pub best_epoch: usize,
}

/// Tokenizes posts in parallel, keeping order and dropping posts with no
/// tokens.
pub fn tokenize_corpus(corpus: &Corpus, vocab: &Vocab, max_len: usize) -> Result<Vec<TokenizedPost>> {
    let posts: Result<Vec<_>> = corpus.posts.par_iter().map(|p| TokenizedPost::from_post(p, vocab, max_len)).collect();
    Ok(posts?.into_iter().filter(|p| !p.ids.is_empty()).collect())
}

/// Sequence scores for every post, in order.
pub fn score_posts(model: &Model, posts: &[TokenizedPost]) -> Result<Vec<f64>> {
    posts.par_iter().map(|p| Ok(model.forward(&p.ids)?.sequence_score)).collect()
}

pub fn macro_f1(model: &Model, posts: &[TokenizedPost], threshold: f64) -> Result<f64> {
    let scores = score_posts(model, posts)?;
    let gold: Vec<Label> = posts.iter().map(|p| Label::from_bool(p.label >= 0.5)).collect();
    let pred: Vec<Label> = scores.iter().map(|&s| Label::from_bool(s >= threshold)).collect();
    Ok(classification_report(&gold, &pred)?.macro_f1)
}

/// Splits the training data into (span stream, classification stream) for
/// the given mode. Span-corpus posts whose id already appears in the
/// training corpus are skipped.
fn build_streams(
    train: &Corpus,
    span: Option<&Corpus>,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<(Vec<TokenizedPost>, Vec<TokenizedPost>)> {
    let max_len = cfg.encoder.max_len;
    let mut all = tokenize_corpus(train, vocab, max_len)?;
    if let Some(span) = span {
        let seen: HashSet<&str> = train.posts.iter().map(|p| p.id.as_str()).collect();
        let extra = Corpus {
            posts: span.posts.iter().filter(|p| !seen.contains(p.id.as_str())).cloned().collect(),
            role: span.role,
        };
        all.extend(tokenize_corpus(&extra, vocab, max_len)?);
    }
    if all.is_empty() {
        return Err(Error::Empty("no tokenizable training posts".into()));
    }
    let (labeled, unlabeled): (Vec<_>, Vec<_>) = all.into_iter().partition(|p| p.token_labels.is_some());
    match cfg.mode {
        TrainMode::MultiTask if labeled.is_empty() => Err(Error::Data(
            "multi-task training needs span-annotated posts; pass a span corpus".into(),
        )),
        TrainMode::MultiTask => Ok((labeled, unlabeled)),
        TrainMode::SpanOnly if labeled.is_empty() => {
            Err(Error::Data("span-only training found no span-annotated posts".into()))
        }
        TrainMode::SpanOnly => Ok((labeled, Vec::new())),
        TrainMode::ClsStyle => {
            let mut posts: Vec<_> = labeled.into_iter().chain(unlabeled).collect();
            for p in &mut posts {
                p.token_labels = None;
            }
            Ok((Vec::new(), posts))
        }
    }
}

/// Batches of one epoch in the alternating order.
fn epoch_schedule(span_len: usize, cls_len: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<(bool, Vec<usize>)> {
    let mut span_idx: Vec<usize> = (0..span_len).collect();
    let mut cls_idx: Vec<usize> = (0..cls_len).collect();
    span_idx.shuffle(rng);
    cls_idx.shuffle(rng);
    let mut span_batches = span_idx.chunks(batch).map(|c| (true, c.to_vec()));
    let mut cls_batches = cls_idx.chunks(batch).map(|c| (false, c.to_vec()));
    let mut out = Vec::new();
    loop {
        let a = span_batches.next();
        let b = cls_batches.next();
        if a.is_none() && b.is_none() {
            return out;
        }
        out.extend(a);
        out.extend(b);
    }
}

pub fn train(
    train_corpus: &Corpus,
    span_corpus: Option<&Corpus>,
    vocab: &Vocab,
    cfg: &TrainConfig,
    validation: Option<&Corpus>,
) -> Result<TrainOutcome> {
    train_with_progress(train_corpus, span_corpus, vocab, cfg, validation, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with_progress(
    train_corpus: &Corpus,
    span_corpus: Option<&Corpus>,
    vocab: &Vocab,
    cfg: &TrainConfig,
    validation: Option<&Corpus>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.patience.is_some() && validation.is_none() {
        return Err(Error::Config("early stopping needs a validation corpus".into()));
    }
    let enc = EncoderConfig { vocab_size: vocab.len(), ..cfg.encoder };
    let (span_stream, cls_stream) = build_streams(train_corpus, span_corpus, vocab, cfg)?;
    let val = validation.map(|v| tokenize_corpus(v, vocab, enc.max_len)).transpose()?;
    if val.as_ref().is_some_and(|v| v.is_empty()) {
        return Err(Error::Empty("validation corpus has no tokenizable posts".into()));
    }

    let mut model = Model::new(&enc, cfg.mode.pooling(), cfg.seed)?;
    let mut state = AdamState::new(model.num_params());
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let (span_objective, cls_objective) = match cfg.mode {
        TrainMode::MultiTask => (Objective::Joint { lambda: cfg.lambda }, Objective::Classification),
        TrainMode::SpanOnly => (Objective::Span, Objective::Span),
        TrainMode::ClsStyle => (Objective::Classification, Objective::Classification),
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model, AdamState, RngState)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let (mut total, mut cls, mut n) = (0.0, 0.0, 0usize);
        let (mut span_sum, mut span_n) = (0.0, 0usize);
        for (is_span, idx) in epoch_schedule(span_stream.len(), cls_stream.len(), cfg.batch_size, &mut rng) {
            let (stream, objective) =
                if is_span { (&span_stream, span_objective) } else { (&cls_stream, cls_objective) };
            let batch: Vec<TokenizedPost> = idx.iter().map(|&i| stream[i].clone()).collect();
            let (l, grads) = loss_and_grad(&batch, &model, objective)?;
            if !l.total.is_finite() {
                return Err(Error::NonFinite(format!("loss {} at epoch {epoch}", l.total)));
            }
            adam_step(&mut model, &grads, &mut state, &adam)?;
            let b = batch.len();
            total += l.total * b as f64;
            cls += l.classification * b as f64;
            n += b;
            if let Some(s) = l.span {
                let labeled = batch.iter().filter(|p| p.token_labels.is_some()).count();
                span_sum += s * labeled as f64;
                span_n += labeled;
            }
        }
        let val_macro_f1 = val.as_ref().map(|v| macro_f1(&model, v, 0.5)).transpose()?;
        let m = EpochMetrics {
            epoch,
            loss: total / n as f64,
            classification: cls / n as f64,
            span: (span_n > 0).then(|| span_sum / span_n as f64),
            val_macro_f1,
        };
        on_epoch(&m);
        log.push(m);

        if let (Some(patience), Some(f1)) = (cfg.patience, val_macro_f1) {
            if best.as_ref().is_none_or(|b| f1 > b.0) {
                best = Some((f1, epoch, model.clone(), state.clone(), RngState::capture(&rng)));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }

    let (best_epoch, model, state, rng_state) = match best {
        Some((_, e, m, s, r)) => (e, m, s, r),
        None => (log.len(), model, state, RngState::capture(&rng)),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            vocab_hash: vocab.hash(),
            step: state.step,
            rng: rng_state,
            optimizer: Some(state),
        },
        log,
        best_epoch,
    })
}
