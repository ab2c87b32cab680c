//! Per-token toxicity scores and their max-pooled sequence score.
//!
//! A shared affine map scores every hidden state, `sᵢ = σ(hᵢ·w + b)`, and the
//! sequence score is the largest token score. A post is therefore never
//! scored as less toxic than its most toxic token, and the tokens that drive
//! the decision double as its explanation.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::encoder::layers::sigmoid;
use crate::error::{Error, Result};
use crate::params::{mut1, ref1, ParamMut, ParamRef};
use crate::span::CharSet;
use crate::tokenizer::Token;

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Array1<f64>,
    /// Single-element bias, kept as a tensor for uniform parameter handling.
    pub bias: Array1<f64>,
}

impl HeadParams {
    pub fn new<R: Rng>(rng: &mut R, d: usize) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        HeadParams {
            weight: Array1::from_shape_simple_fn(d, || rng.random_range(-bound..bound)),
            bias: Array1::zeros(1),
        }
    }

    pub fn zeros(d: usize) -> Self {
        HeadParams { weight: Array1::zeros(d), bias: Array1::zeros(1) }
    }

    pub fn bias(&self) -> f64 {
        self.bias[0]
    }

    pub fn logits(&self, hidden: &Array2<f64>) -> Array1<f64> {
        hidden.dot(&self.weight) + self.bias[0]
    }

    pub(crate) fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        ref1(out, format!("{prefix}weight"), &self.weight);
        ref1(out, format!("{prefix}bias"), &self.bias);
    }

    pub(crate) fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        mut1(out, format!("{prefix}weight"), &mut self.weight);
        mut1(out, format!("{prefix}bias"), &mut self.bias);
    }
}

pub fn token_scores(hidden: &Array2<f64>, head: &HeadParams) -> Vec<f64> {
    head.logits(hidden).iter().map(|&z| sigmoid(z)).collect()
}

/// Exact maximum of `scores` and the earliest index attaining it.
pub fn sequence_score(scores: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((b, _)) if s <= b => {}
            _ => best = Some((s, i)),
        }
    }
    best.ok_or_else(|| Error::Empty("max pooling over an empty score sequence".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationWord {
    pub index: usize,
    pub word: String,
    pub score: f64,
}

/// The `k` highest-scoring word tokens, ties broken by earlier position.
/// Punctuation tokens are skipped.
pub fn top_k_explanation(tokens: &[Token], scores: &[f64], k: usize) -> Vec<ExplanationWord> {
    let mut words: Vec<usize> = (0..tokens.len().min(scores.len()))
        .filter(|&i| tokens[i].is_word())
        .collect();
    // Stable sort keeps earlier positions first among equal scores.
    words.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    words
        .into_iter()
        .take(k)
        .map(|i| ExplanationWord { index: i, word: tokens[i].surface.clone(), score: scores[i] })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub classification: f64,
    pub span: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { classification: 0.5, span: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tokens: Vec<Token>,
    pub token_scores: Vec<f64>,
    pub sequence_score: f64,
    /// Earliest index of the maximal token score.
    pub argmax: usize,
    pub label: Label,
    pub explanation: Vec<ExplanationWord>,
    pub predicted_chars: CharSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: String,
    pub score: f64,
}

/// Wire format of a prediction, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: u8,
    pub score: f64,
    pub tokens: Vec<TokenScore>,
    pub explanation: Vec<WordScore>,
}

impl Prediction {
    pub fn to_record(&self, id: &str) -> PredictionRecord {
        PredictionRecord {
            id: id.to_string(),
            label: self.label as u8,
            score: self.sequence_score,
            tokens: self
                .tokens
                .iter()
                .zip(&self.token_scores)
                .map(|(t, &score)| TokenScore {
                    surface: t.surface.clone(),
                    start: t.start,
                    end: t.end,
                    score,
                })
                .collect(),
            explanation: self
                .explanation
                .iter()
                .map(|e| WordScore { word: e.word.clone(), score: e.score })
                .collect(),
        }
    }
}

impl PredictionRecord {
    /// Characters of tokens scoring at least `tau_span`.
    pub fn predicted_chars(&self, tau_span: f64) -> CharSet {
        self.tokens
            .iter()
            .filter(|t| t.score >= tau_span)
            .flat_map(|t| t.start..t.end)
            .collect()
    }
}
