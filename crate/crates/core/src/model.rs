//! Encoder plus scoring head, with forward, backward, and prediction.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::encoder::layers::sigmoid;
use crate::encoder::{init_params, EncoderConfig, EncoderOutput, EncoderParams};
use crate::error::{Error, Result};
use crate::head::{sequence_score, top_k_explanation, HeadParams, Prediction, Thresholds, DEFAULT_TOP_K};
use crate::params::{ParamMut, ParamRef, Parameters};
use crate::tokenizer::{encode, tokenize, tokens_to_char_set, Vocab};

/// How token states become a sequence score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Max over per-token scores.
    Max,
    /// Sigmoid of the head applied to the mean hidden state; a pooled
    /// sequence classifier without token-level structure.
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub pooling: Pooling,
}

#[derive(Debug, Clone)]
pub struct ModelForward {
    pub encoded: EncoderOutput,
    pub token_scores: Vec<f64>,
    pub sequence_score: f64,
    pub argmax: usize,
    mean_hidden: Option<Array1<f64>>,
}

impl Model {
    pub fn new(config: &EncoderConfig, pooling: Pooling, seed: u64) -> Result<Self> {
        let encoder = init_params(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Model { head: HeadParams::new(&mut rng, config.d), encoder, pooling })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: self.encoder.zeros_like(),
            head: HeadParams::zeros(self.encoder.config.d),
            pooling: self.pooling,
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Result<ModelForward> {
        let encoded = self.encoder.forward(ids)?;
        let token_scores = crate::head::token_scores(&encoded.hidden, &self.head);
        let (max_score, argmax) = sequence_score(&token_scores)?;
        let (sequence_score, mean_hidden) = match self.pooling {
            Pooling::Max => (max_score, None),
            Pooling::Mean => {
                let mean = encoded.hidden.mean_axis(Axis(0)).expect("non-empty");
                (sigmoid(mean.dot(&self.head.weight) + self.head.bias()), Some(mean))
            }
        };
        Ok(ModelForward { encoded, token_scores, sequence_score, argmax, mean_hidden })
    }

    /// Accumulates gradients given `dL/dsᵢ` for every token score and `dL/ds̃`
    /// for the sequence score. Under max pooling the sequence gradient flows
    /// only to the earliest argmax token.
    pub fn backward_into(&self, fwd: &ModelForward, d_token: &[f64], d_sequence: f64, grads: &mut Model) -> Result<()> {
        let n = fwd.token_scores.len();
        if d_token.len() != n {
            return Err(Error::Shape(format!("{} token gradients for {n} tokens", d_token.len())));
        }
        let hidden = &fwd.encoded.hidden;
        let mut d_score = d_token.to_vec();
        let mut d_hidden = Array2::zeros(hidden.dim());
        match self.pooling {
            Pooling::Max => d_score[fwd.argmax] += d_sequence,
            Pooling::Mean => {
                let s = fwd.sequence_score;
                let dz = d_sequence * s * (1.0 - s);
                let mean = fwd.mean_hidden.as_ref().expect("mean pooling caches the mean");
                grads.head.weight.scaled_add(dz, mean);
                grads.head.bias[0] += dz;
                let row = &self.head.weight * (dz / n as f64);
                d_hidden += &row.insert_axis(Axis(0));
            }
        }
        let d_logit: Array1<f64> = d_score
            .iter()
            .zip(&fwd.token_scores)
            .map(|(&g, &s)| g * s * (1.0 - s))
            .collect();
        grads.head.weight += &hidden.t().dot(&d_logit);
        grads.head.bias[0] += d_logit.sum();
        let outer = d_logit
            .view()
            .insert_axis(Axis(1))
            .dot(&self.head.weight.view().insert_axis(Axis(0)));
        d_hidden += &outer;
        self.encoder.backward_into(&fwd.encoded, &d_hidden, &mut grads.encoder)?;
        Ok(())
    }

    /// Tokenizes, encodes, scores, and explains one text.
    pub fn predict(&self, text: &str, vocab: &Vocab, thresholds: Thresholds) -> Result<Prediction> {
        let mut tokens = tokenize(text);
        let ids = encode(&mut tokens, vocab, self.encoder.config.max_len);
        if ids.is_empty() {
            return Err(Error::Empty("text contains no tokens".into()));
        }
        let fwd = self.forward(&ids)?;
        let label = Label::from_bool(fwd.sequence_score >= thresholds.classification);
        let selected = (0..tokens.len()).filter(|&i| fwd.token_scores[i] >= thresholds.span);
        let predicted_chars = tokens_to_char_set(&tokens, selected);
        let explanation = top_k_explanation(&tokens, &fwd.token_scores, DEFAULT_TOP_K);
        Ok(Prediction {
            tokens,
            token_scores: fwd.token_scores,
            sequence_score: fwd.sequence_score,
            argmax: fwd.argmax,
            label,
            explanation,
            predicted_chars,
        })
    }
}

impl Parameters for Model {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.encoder.refs("encoder.", &mut out);
        self.head.refs("head.", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.encoder.muts("encoder.", &mut out);
        self.head.muts("head.", &mut out);
        out
    }
}
