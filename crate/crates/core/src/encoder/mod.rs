//! Sequence encoder: token ids to contextual hidden states `H` (`n × d`).
//!
//! Two architectures share one contract. The default is a pre-norm
//! transformer with learned positional embeddings; the alternative is a stack
//! of bidirectional recurrent layers. Both end in a layer norm. Gradients are
//! computed by hand-written reverse mode in `f64`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ref2, mut2, ParamMut, ParamRef, Parameters};
use crate::tokenizer::PAD_ID;

pub mod layers;
pub mod recurrent;
pub mod transformer;

use layers::{LayerNorm, LayerNormCache};
use recurrent::{RecurrentCache, RecurrentLayer};
use transformer::{TransformerCache, TransformerLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Transformer,
    BiRecurrent,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Transformer => "transformer",
            Arch::BiRecurrent => "bi-recurrent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Arch::Transformer),
            "bi-recurrent" | "birnn" | "recurrent" => Ok(Arch::BiRecurrent),
            other => Err(Error::Config(format!("unknown encoder architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub max_len: usize,
    pub arch: Arch,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d: 64,
            layers: 2,
            heads: 2,
            ffn_width: 128,
            max_len: 256,
            arch: Arch::Transformer,
        }
    }

    pub fn head_width(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d", self.d),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_width", self.ffn_width),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder dimension `{name}` must be at least 1")));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.arch == Arch::BiRecurrent && self.d % 2 != 0 {
            return Err(Error::Config(format!(
                "bi-recurrent encoder needs an even hidden width, got {}",
                self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layers {
    Transformer(Vec<TransformerLayer>),
    BiRecurrent(Vec<RecurrentLayer>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Layers,
    pub final_norm: LayerNorm,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Transformer(TransformerCache),
    BiRecurrent(RecurrentCache),
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Final hidden states, one row per input position.
    pub hidden: Array2<f64>,
    ids: Vec<usize>,
    layer_caches: Vec<LayerCache>,
    final_cache: LayerNormCache,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.nrows() == 0
    }
}

/// Deterministic initialization: embeddings uniform in `±1/sqrt(d)`, linear
/// maps uniform in `±1/sqrt(fan_in)`, zero biases, identity layer norms.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d;
    let bound = 1.0 / (d as f64).sqrt();
    let token_emb = layers::uniform(&mut rng, config.vocab_size, d, bound);
    let pos_emb = layers::uniform(&mut rng, config.max_len, d, bound);
    let layers = match config.arch {
        Arch::Transformer => Layers::Transformer(
            (0..config.layers)
                .map(|_| TransformerLayer::new(&mut rng, d, config.heads, config.ffn_width))
                .collect(),
        ),
        Arch::BiRecurrent => Layers::BiRecurrent(
            (0..config.layers).map(|_| RecurrentLayer::new(&mut rng, d)).collect(),
        ),
    };
    Ok(EncoderParams {
        config: *config,
        token_emb,
        pos_emb,
        layers,
        final_norm: LayerNorm::identity(d),
    })
}

impl EncoderParams {
    /// All-zero tensors with this configuration's shapes; used as a gradient
    /// accumulator.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let layers = match config.arch {
            Arch::Transformer => Layers::Transformer(
                (0..config.layers)
                    .map(|_| TransformerLayer::zeros(d, config.heads, config.ffn_width))
                    .collect(),
            ),
            Arch::BiRecurrent => {
                Layers::BiRecurrent((0..config.layers).map(|_| RecurrentLayer::zeros(d)).collect())
            }
        };
        Ok(EncoderParams {
            config: *config,
            token_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_len, d)),
            layers,
            final_norm: LayerNorm::zeros(d),
        })
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams::zeros(&self.config).expect("config validated at construction")
    }

    pub fn forward(&self, ids: &[usize]) -> Result<EncoderOutput> {
        self.forward_masked(ids, ids.len())
    }

    /// Encodes `ids` where only the first `valid_len` positions are real and
    /// the rest are padding. Padded positions are excluded from attention (and
    /// from recurrence), so the valid rows equal those of an unpadded pass.
    pub fn forward_masked(&self, ids: &[usize], valid_len: usize) -> Result<EncoderOutput> {
        let n = ids.len();
        if n == 0 || valid_len == 0 {
            return Err(Error::Empty("cannot encode an empty sequence".into()));
        }
        if valid_len > n {
            return Err(Error::Shape(format!("valid length {valid_len} exceeds sequence length {n}")));
        }
        if n > self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {n} exceeds max_len {}",
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let d = self.config.d;
        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &self.token_emb.row(id);
            row += &self.pos_emb.row(i);
        }
        let valid: Vec<bool> = (0..n).map(|i| i < valid_len).collect();
        let mut layer_caches = Vec::new();
        match &self.layers {
            Layers::Transformer(ls) => {
                for l in ls {
                    let (out, cache) = l.forward(&x, &valid);
                    x = out;
                    layer_caches.push(LayerCache::Transformer(cache));
                }
            }
            Layers::BiRecurrent(ls) => {
                for l in ls {
                    let (out, cache) = l.forward(&x, valid_len);
                    x = out;
                    layer_caches.push(LayerCache::BiRecurrent(cache));
                }
            }
        }
        let (hidden, final_cache) = self.final_norm.forward(&x);
        Ok(EncoderOutput { hidden, ids: ids.to_vec(), layer_caches, final_cache })
    }

    /// Encodes several sequences as one padded batch: each sequence is padded
    /// with the PAD id to the longest length and padded keys are masked.
    /// Returned outputs keep their padded rows.
    pub fn forward_batch(&self, batch: &[Vec<usize>]) -> Result<Vec<EncoderOutput>> {
        let width = batch.iter().map(Vec::len).max().unwrap_or(0);
        batch
            .iter()
            .map(|ids| {
                let mut padded = ids.clone();
                padded.resize(width, PAD_ID);
                self.forward_masked(&padded, ids.len())
            })
            .collect()
    }

    /// Accumulates parameter gradients for `output` under upstream gradient
    /// `d_hidden` into `grads`, and returns the gradient with respect to the
    /// summed input embeddings (`n × d`).
    pub fn backward_into(
        &self,
        output: &EncoderOutput,
        d_hidden: &Array2<f64>,
        grads: &mut EncoderParams,
    ) -> Result<Array2<f64>> {
        if d_hidden.dim() != output.hidden.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, hidden states are {:?}",
                d_hidden.dim(),
                output.hidden.dim()
            )));
        }
        if grads.config != self.config {
            return Err(Error::Shape("gradient accumulator has a different configuration".into()));
        }
        let mut dx = self.final_norm.backward(d_hidden, &output.final_cache, &mut grads.final_norm);
        match (&self.layers, &mut grads.layers) {
            (Layers::Transformer(ls), Layers::Transformer(gs)) => {
                for ((l, g), c) in ls.iter().zip(gs.iter_mut()).zip(&output.layer_caches).rev() {
                    let LayerCache::Transformer(c) = c else { unreachable!() };
                    dx = l.backward(&dx, c, g);
                }
            }
            (Layers::BiRecurrent(ls), Layers::BiRecurrent(gs)) => {
                for ((l, g), c) in ls.iter().zip(gs.iter_mut()).zip(&output.layer_caches).rev() {
                    let LayerCache::BiRecurrent(c) = c else { unreachable!() };
                    dx = l.backward(&dx, c, g);
                }
            }
            _ => return Err(Error::Shape("architecture mismatch between params and grads".into())),
        }
        for (i, &id) in output.ids.iter().enumerate() {
            let row = dx.row(i);
            let mut t = grads.token_emb.row_mut(id);
            t += &row;
            let mut p = grads.pos_emb.row_mut(i);
            p += &row;
        }
        Ok(dx)
    }

    pub fn backward(&self, output: &EncoderOutput, d_hidden: &Array2<f64>) -> Result<(EncoderParams, Array2<f64>)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(output, d_hidden, &mut grads)?;
        Ok((grads, dx))
    }

    pub(crate) fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        ref2(out, format!("{prefix}token_emb"), &self.token_emb);
        ref2(out, format!("{prefix}pos_emb"), &self.pos_emb);
        match &self.layers {
            Layers::Transformer(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    l.refs(&format!("{prefix}layer{i}"), out);
                }
            }
            Layers::BiRecurrent(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    l.refs(&format!("{prefix}layer{i}"), out);
                }
            }
        }
        self.final_norm.refs(&format!("{prefix}final_norm"), out);
    }

    pub(crate) fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        mut2(out, format!("{prefix}token_emb"), &mut self.token_emb);
        mut2(out, format!("{prefix}pos_emb"), &mut self.pos_emb);
        match &mut self.layers {
            Layers::Transformer(ls) => {
                for (i, l) in ls.iter_mut().enumerate() {
                    l.muts(&format!("{prefix}layer{i}"), out);
                }
            }
            Layers::BiRecurrent(ls) => {
                for (i, l) in ls.iter_mut().enumerate() {
                    l.muts(&format!("{prefix}layer{i}"), out);
                }
            }
        }
        self.final_norm.muts(&format!("{prefix}final_norm"), out);
    }
}

impl Parameters for EncoderParams {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.refs("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.muts("", &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;

    fn weighted_sum(hidden: &Array2<f64>, weights: &Array2<f64>) -> f64 {
        (hidden * weights).sum()
    }

    fn small(arch: Arch) -> EncoderConfig {
        EncoderConfig { vocab_size: 12, d: 8, layers: 2, heads: 2, ffn_width: 12, max_len: 10, arch }
    }

    #[test]
    fn init_is_deterministic_and_validates() {
        let cfg = EncoderConfig::new(50);
        assert_eq!(cfg.head_width(), 32);
        let a = init_params(&cfg, 9).unwrap();
        let b = init_params(&cfg, 9).unwrap();
        let bits = |p: &EncoderParams| p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_params(&cfg, 10).unwrap()));
        let bad = EncoderConfig { d: 63, ..cfg };
        assert!(matches!(init_params(&bad, 1), Err(Error::Config(_))));
        let zero = EncoderConfig { layers: 0, ..cfg };
        assert!(init_params(&zero, 1).is_err());
    }

    #[test]
    fn forward_shape_and_errors() {
        let p = init_params(&EncoderConfig::new(20), 1).unwrap();
        let out = p.forward(&[2, 3, 4, 5, 6]).unwrap();
        assert_eq!(out.hidden.dim(), (5, 64));
        assert!(out.hidden.iter().all(|v| v.is_finite()));
        assert!(matches!(p.forward(&[]), Err(Error::Empty(_))));
        assert!(p.forward(&[20]).is_err());
    }

    #[test]
    fn forward_is_position_sensitive_and_deterministic() {
        for arch in [Arch::Transformer, Arch::BiRecurrent] {
            let p = init_params(&small(arch), 4).unwrap();
            let a = p.forward(&[2, 3, 4]).unwrap().hidden;
            let b = p.forward(&[3, 2, 4]).unwrap().hidden;
            assert_eq!(a, p.forward(&[2, 3, 4]).unwrap().hidden);
            assert!((&a - &b).iter().any(|v| v.abs() > 1e-6));
        }
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        for arch in [Arch::Transformer, Arch::BiRecurrent] {
            let p = init_params(&small(arch), 2).unwrap();
            let out = p.forward(&[1, 5, 7, 2]).unwrap();
            let dh = layers::uniform(&mut ChaCha8Rng::seed_from_u64(1), 4, 8, 1.0);
            let (g1, dx1) = p.backward(&out, &dh).unwrap();
            let (g2, dx2) = p.backward(&out, &(&dh * 2.0)).unwrap();
            for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
                assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            assert!((dx1 * 2.0 - dx2).iter().all(|v| v.abs() < 1e-12));
            let (g0, _) = p.backward(&out, &Array2::zeros((4, 8))).unwrap();
            assert!(g0.to_flat().iter().all(|&v| v == 0.0));
            assert!(p.backward(&out, &Array2::zeros((3, 8))).is_err());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for arch in [Arch::Transformer, Arch::BiRecurrent] {
            let p = init_params(&small(arch), 5).unwrap();
            let ids = [3, 1, 4, 1, 5];
            let r = layers::uniform(&mut ChaCha8Rng::seed_from_u64(2), 5, 8, 1.0);
            let out = p.forward(&ids).unwrap();
            let (g, _) = p.backward(&out, &r).unwrap();
            let theta = p.to_flat();
            let loss = |flat: &[f64]| {
                let mut q = p.clone();
                q.set_flat(flat).unwrap();
                weighted_sum(&q.forward(&ids).unwrap().hidden, &r)
            };
            let err = finite_diff_check(loss, &theta, &g.to_flat(), 1e-5, 300, 1);
            assert!(err < 1e-5, "{arch:?}: max relative error {err}");
        }
    }

    #[test]
    fn padding_does_not_change_valid_rows_or_gradients() {
        for arch in [Arch::Transformer, Arch::BiRecurrent] {
            let p = init_params(&small(arch), 8).unwrap();
            let ids = vec![4, 2, 9];
            let plain = p.forward(&ids).unwrap();
            let batch = p.forward_batch(&[ids.clone(), vec![3, 3, 3, 3, 3, 3]]).unwrap();
            let padded = &batch[0];
            assert_eq!(padded.len(), 6);
            for i in 0..3 {
                for j in 0..8 {
                    assert!((plain.hidden[[i, j]] - padded.hidden[[i, j]]).abs() < 1e-12);
                }
            }
            let r = layers::uniform(&mut ChaCha8Rng::seed_from_u64(6), 3, 8, 1.0);
            let mut r_pad = Array2::zeros((6, 8));
            r_pad.slice_mut(ndarray::s![..3, ..]).assign(&r);
            let (g_plain, _) = p.backward(&plain, &r).unwrap();
            let (g_pad, _) = p.backward(padded, &r_pad).unwrap();
            for (a, b) in g_plain.to_flat().iter().zip(g_pad.to_flat()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            // The PAD embedding row never receives gradient.
            assert!(g_pad.token_emb.row(PAD_ID).iter().all(|&v| v == 0.0));
        }
    }
}
