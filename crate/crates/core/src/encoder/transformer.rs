//! Pre-norm transformer block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::layers::{gelu, gelu_grad, softmax_rows, LayerNorm, LayerNormCache, Linear};
use crate::params::{ParamMut, ParamRef};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct TransformerCache {
    attn_norm: LayerNormCache,
    normed: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    ffn_norm: LayerNormCache,
    ffn_input: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl TransformerLayer {
    pub fn new<R: Rng>(rng: &mut R, d: usize, heads: usize, ffn: usize) -> Self {
        TransformerLayer {
            attn_norm: LayerNorm::identity(d),
            query: Linear::new(rng, d, d),
            key: Linear::new(rng, d, d),
            value: Linear::new(rng, d, d),
            output: Linear::new(rng, d, d),
            ffn_norm: LayerNorm::identity(d),
            ffn_in: Linear::new(rng, d, ffn),
            ffn_out: Linear::new(rng, ffn, d),
            heads,
        }
    }

    pub fn zeros(d: usize, heads: usize, ffn: usize) -> Self {
        TransformerLayer {
            attn_norm: LayerNorm::zeros(d),
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
            ffn_norm: LayerNorm::zeros(d),
            ffn_in: Linear::zeros(d, ffn),
            ffn_out: Linear::zeros(ffn, d),
            heads,
        }
    }

    /// `valid[j] == false` masks key position `j` out of every query's
    /// attention distribution.
    pub fn forward(&self, x: &Array2<f64>, valid: &[bool]) -> (Array2<f64>, TransformerCache) {
        let (n, d) = x.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (normed, attn_norm) = self.attn_norm.forward(x);
        let q = self.query.forward(&normed);
        let k = self.key.forward(&normed);
        let v = self.value.forward(&normed);
        let mut context = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for (j, &ok) in valid.iter().enumerate() {
                if !ok {
                    scores.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
            softmax_rows(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let attended = x + &self.output.forward(&context);
        let (ffn_input, ffn_norm) = self.ffn_norm.forward(&attended);
        let pre_act = self.ffn_in.forward(&ffn_input);
        let act = pre_act.mapv(gelu);
        let out = &attended + &self.ffn_out.forward(&act);
        let cache = TransformerCache {
            attn_norm,
            normed,
            q,
            k,
            v,
            probs,
            context,
            ffn_norm,
            ffn_input,
            pre_act,
            act,
        };
        (out, cache)
    }

    pub fn backward(&self, dout: &Array2<f64>, c: &TransformerCache, g: &mut TransformerLayer) -> Array2<f64> {
        let (n, d) = dout.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // Feed-forward branch.
        let d_act = self.ffn_out.backward(&c.act, dout, &mut g.ffn_out);
        let d_pre = d_act * &c.pre_act.mapv(gelu_grad);
        let d_ffn_input = self.ffn_in.backward(&c.ffn_input, &d_pre, &mut g.ffn_in);
        let d_attended = dout + &self.ffn_norm.backward(&d_ffn_input, &c.ffn_norm, &mut g.ffn_norm);

        // Attention branch.
        let d_context = self.output.backward(&c.context, &d_attended, &mut g.output);
        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &c.probs[h];
            let dctx = d_context.slice(cols);
            let dp = dctx.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (dp - &row_dot) * p * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut d_normed = self.query.backward(&c.normed, &dq, &mut g.query);
        d_normed += &self.key.backward(&c.normed, &dk, &mut g.key);
        d_normed += &self.value.backward(&c.normed, &dv, &mut g.value);
        d_attended + &self.attn_norm.backward(&d_normed, &c.attn_norm, &mut g.attn_norm)
    }

    pub(crate) fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.attn_norm.refs(&format!("{prefix}.attn_norm"), out);
        self.query.refs(&format!("{prefix}.query"), out);
        self.key.refs(&format!("{prefix}.key"), out);
        self.value.refs(&format!("{prefix}.value"), out);
        self.output.refs(&format!("{prefix}.output"), out);
        self.ffn_norm.refs(&format!("{prefix}.ffn_norm"), out);
        self.ffn_in.refs(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.refs(&format!("{prefix}.ffn_out"), out);
    }

    pub(crate) fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.attn_norm.muts(&format!("{prefix}.attn_norm"), out);
        self.query.muts(&format!("{prefix}.query"), out);
        self.key.muts(&format!("{prefix}.key"), out);
        self.value.muts(&format!("{prefix}.value"), out);
        self.output.muts(&format!("{prefix}.output"), out);
        self.ffn_norm.muts(&format!("{prefix}.ffn_norm"), out);
        self.ffn_in.muts(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.muts(&format!("{prefix}.ffn_out"), out);
    }
}
