//! Logistic regression over stemmed unigram and bigram counts.
//!
//! Punctuation tokens are dropped before feature extraction, so bigrams join
//! adjacent words. The explanation of a prediction is every word occurrence
//! that backs a feature with positive weight.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::encoder::layers::sigmoid;
use crate::error::{Error, Result};
use crate::span::CharSet;
use crate::tokenizer::{tokenize, Token};

/// Bumped whenever [`stem`] changes behavior; stored in model files.
pub const STEMMER_VERSION: u32 = 1;
const MODEL_HEADER: &str = "#spanmax-lr";
const MIN_STEM: usize = 3;

/// Suffix rules, tried in order; the first whose stem passes the length
/// guard wins.
const SUFFIXES: &[(&str, &str)] = &[
    ("sses", "ss"),
    ("ies", "y"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("xes", "x"),
    ("zes", "z"),
    ("ingly", ""),
    ("edly", ""),
    ("ing", ""),
    ("ed", ""),
    ("ly", ""),
    ("s", ""),
];

/// Rule-based suffix stripping. Stems shorter than three characters are
/// never produced, and words ending in `ss`, `us` or `is` keep their `s`.
pub fn stem(word: &str) -> String {
    if !word.chars().all(char::is_alphabetic) {
        return word.to_string();
    }
    for &(suffix, replacement) in SUFFIXES {
        if let Some(base) = word.strip_suffix(suffix) {
            if suffix == "s" && (base.ends_with('s') || base.ends_with('u') || base.ends_with('i')) {
                continue;
            }
            if base.chars().count() + replacement.chars().count() >= MIN_STEM {
                return format!("{base}{replacement}");
            }
        }
    }
    word.to_string()
}

/// A feature with the token positions backing each of its occurrences.
struct Occurrence {
    feature: String,
    tokens: Vec<usize>,
}

fn occurrences(tokens: &[Token]) -> Vec<Occurrence> {
    let words: Vec<(usize, String)> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_word())
        .map(|(i, t)| (i, stem(&t.surface)))
        .collect();
    let mut out: Vec<Occurrence> = words
        .iter()
        .map(|(i, w)| Occurrence { feature: w.clone(), tokens: vec![*i] })
        .collect();
    out.extend(words.windows(2).map(|pair| Occurrence {
        feature: format!("{}_{}", pair[0].1, pair[1].1),
        tokens: vec![pair[0].0, pair[1].0],
    }));
    out
}

/// Feature name to count.
pub type FeatureCounts = BTreeMap<String, usize>;

pub fn featurize(text: &str) -> FeatureCounts {
    let mut counts = FeatureCounts::new();
    for occ in occurrences(&tokenize(text)) {
        *counts.entry(occ.feature).or_default() += 1;
    }
    counts
}

/// Sparse counts over a model's frozen feature space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    fn dot(&self, w: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, c)| w[i] * c).sum()
    }

    fn sq_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, c)| c * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub l2: f64,
    pub epochs: usize,
    /// Upper bound on the step size; it is lowered automatically to keep
    /// gradient descent stable.
    pub learning_rate: f64,
    /// Accepted for interface symmetry; full-batch descent from zero is
    /// already deterministic.
    pub seed: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { l2: 1e-3, epochs: 2000, learning_rate: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    features: Vec<String>,
    index: HashMap<String, usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

impl LrModel {
    pub fn from_weights(weights: impl IntoIterator<Item = (String, f64)>, bias: f64, l2: f64) -> Self {
        let (features, weights): (Vec<String>, Vec<f64>) = weights.into_iter().unzip();
        let index = features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
        LrModel { features, index, weights, bias, l2 }
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn weight(&self, feature: &str) -> Option<f64> {
        self.index.get(feature).map(|&i| self.weights[i])
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Unknown features are dropped.
    pub fn vectorize(&self, text: &str) -> FeatureVector {
        FeatureVector {
            entries: featurize(text)
                .into_iter()
                .filter_map(|(f, c)| self.index.get(&f).map(|&i| (i, c as f64)))
                .collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "{MODEL_HEADER}\tv1\tstemmer={STEMMER_VERSION}\tbias={}\tl2={}\n",
            self.bias, self.l2
        );
        for (f, w) in self.features.iter().zip(&self.weights) {
            out.push_str(&format!("{f}\t{w}\n"));
        }
        out
    }

    pub fn from_tsv(s: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse { source_name: "lr model".into(), line, message };
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty model file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 || fields[0] != MODEL_HEADER || fields[1] != "v1" {
            return Err(bad(1, format!("unrecognized header `{header}`")));
        }
        let value = |field: &str, key: &str| -> Result<f64> {
            field
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(1, format!("expected `{key}<number>`, got `{field}`")))
        };
        let stemmer = value(fields[2], "stemmer=")?;
        if stemmer != STEMMER_VERSION as f64 {
            return Err(bad(1, format!("model uses stemmer version {stemmer}, this build has {STEMMER_VERSION}")));
        }
        let bias = value(fields[3], "bias=")?;
        let l2 = value(fields[4], "l2=")?;
        let mut weights = Vec::new();
        for (n, line) in lines.enumerate() {
            let (f, w) = line
                .split_once('\t')
                .ok_or_else(|| bad(n + 2, "expected `feature<TAB>weight`".into()))?;
            let w: f64 = w.parse().map_err(|_| bad(n + 2, format!("bad weight `{w}`")))?;
            weights.push((f.to_string(), w));
        }
        Ok(LrModel::from_weights(weights, bias, l2))
    }
}

/// Full-batch gradient descent from zero on mean log-loss plus
/// `l2·‖w‖²` (bias unregularized). Stops when the gradient's largest entry
/// falls below 1e-6 or after `epochs` passes.
pub fn train_lr(corpus: &Corpus, cfg: &LrConfig) -> Result<LrModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("cannot train on an empty corpus".into()));
    }
    if cfg.l2 < 0.0 || !cfg.l2.is_finite() || cfg.learning_rate <= 0.0 {
        return Err(Error::Config(format!(
            "l2 must be non-negative and learning rate positive (got {}, {})",
            cfg.l2, cfg.learning_rate
        )));
    }
    let mut vocab = FeatureCounts::new();
    let counts: Vec<FeatureCounts> = corpus.posts.iter().map(|p| featurize(&p.text)).collect();
    for c in &counts {
        for f in c.keys() {
            vocab.entry(f.clone()).or_insert(0);
        }
    }
    let mut model = LrModel::from_weights(vocab.into_keys().map(|f| (f, 0.0)), 0.0, cfg.l2);
    let xs: Vec<FeatureVector> = counts
        .into_iter()
        .map(|c| FeatureVector {
            entries: c.into_iter().map(|(f, n)| (model.index[&f], n as f64)).collect(),
        })
        .collect();
    let ys: Vec<f64> = corpus.posts.iter().map(|p| p.label.as_f64()).collect();
    let n = xs.len() as f64;

    // The mean log-loss is (max‖x‖² + 1)/4-smooth including the bias column;
    // the penalty adds 2·l2. A step of 1/L always descends.
    let max_sq = xs.iter().map(FeatureVector::sq_norm).fold(0.0, f64::max);
    let smooth = (max_sq + 1.0) / 4.0 + 2.0 * cfg.l2;
    let step = cfg.learning_rate.min(1.0 / smooth);

    let mut grad = vec![0.0; model.weights.len()];
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let r = (sigmoid(x.dot(&model.weights) + model.bias) - y) / n;
            for &(i, c) in &x.entries {
                grad[i] += r * c;
            }
            grad_b += r;
        }
        for (g, w) in grad.iter_mut().zip(&model.weights) {
            *g += 2.0 * cfg.l2 * w;
        }
        let largest = grad.iter().fold(grad_b.abs(), |m, g| m.max(g.abs()));
        if !largest.is_finite() {
            return Err(Error::NonFinite("logistic regression gradient".into()));
        }
        if largest < 1e-6 {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        model.bias -= step * grad_b;
    }
    Ok(model)
}

pub fn predict_lr(model: &LrModel, text: &str) -> f64 {
    sigmoid(model.vectorize(text).dot(&model.weights) + model.bias)
}

pub fn predict_lr_label(model: &LrModel, text: &str) -> Label {
    Label::from_bool(predict_lr(model, text) >= 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordContribution {
    /// Token index in the tokenized text.
    pub index: usize,
    pub word: String,
    /// Sum of the weights of every feature this occurrence backs.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrExplanation {
    pub tokens: Vec<Token>,
    /// Characters of word occurrences backing a positive-weight feature.
    pub chars: CharSet,
    /// One entry per word token, in text order.
    pub words: Vec<WordContribution>,
}

pub fn explain_lr(model: &LrModel, text: &str) -> LrExplanation {
    let tokens = tokenize(text);
    let mut contribution: BTreeMap<usize, f64> =
        tokens.iter().enumerate().filter(|(_, t)| t.is_word()).map(|(i, _)| (i, 0.0)).collect();
    let mut chars = CharSet::new();
    for occ in occurrences(&tokens) {
        let Some(w) = model.weight(&occ.feature) else { continue };
        for &t in &occ.tokens {
            *contribution.get_mut(&t).expect("feature tokens are words") += w;
            if w > 0.0 {
                chars.extend(tokens[t].start..tokens[t].end);
            }
        }
    }
    let words = contribution
        .into_iter()
        .map(|(index, contribution)| WordContribution { index, word: tokens[index].surface.clone(), contribution })
        .collect();
    LrExplanation { tokens, chars, words }
}
