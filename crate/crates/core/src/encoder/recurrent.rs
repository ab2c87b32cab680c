//! Bidirectional Elman layer with a residual connection:
//! `out_t = x_t + [fwd_t ; bwd_t]`, each direction `d/2` wide.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::layers::Linear;
use crate::params::{mut2, ref2, ParamMut, ParamRef};

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentLayer {
    pub fwd_input: Linear,
    pub fwd_hidden: Array2<f64>,
    pub bwd_input: Linear,
    pub bwd_hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct RecurrentCache {
    input: Array2<f64>,
    len: usize,
    fwd: Array2<f64>,
    bwd: Array2<f64>,
}

impl RecurrentLayer {
    pub fn new<R: Rng>(rng: &mut R, d: usize) -> Self {
        let half = d / 2;
        let bound = 1.0 / (half as f64).sqrt();
        RecurrentLayer {
            fwd_input: Linear::new(rng, d, half),
            fwd_hidden: super::layers::uniform(rng, half, half, bound),
            bwd_input: Linear::new(rng, d, half),
            bwd_hidden: super::layers::uniform(rng, half, half, bound),
        }
    }

    pub fn zeros(d: usize) -> Self {
        let half = d / 2;
        RecurrentLayer {
            fwd_input: Linear::zeros(d, half),
            fwd_hidden: Array2::zeros((half, half)),
            bwd_input: Linear::zeros(d, half),
            bwd_hidden: Array2::zeros((half, half)),
        }
    }

    /// Runs over the valid prefix `x[..len]`; padded rows pass through.
    pub fn forward(&self, x: &Array2<f64>, len: usize) -> (Array2<f64>, RecurrentCache) {
        let d = x.ncols();
        let half = d / 2;
        let xin_f = self.fwd_input.forward(&x.slice(s![..len, ..]).to_owned());
        let xin_b = self.bwd_input.forward(&x.slice(s![..len, ..]).to_owned());
        let mut fwd = Array2::zeros((len, half));
        let mut bwd = Array2::zeros((len, half));
        let mut h = Array1::zeros(half);
        for t in 0..len {
            h = (&xin_f.row(t) + &h.dot(&self.fwd_hidden)).mapv(f64::tanh);
            fwd.row_mut(t).assign(&h);
        }
        let mut h = Array1::zeros(half);
        for t in (0..len).rev() {
            h = (&xin_b.row(t) + &h.dot(&self.bwd_hidden)).mapv(f64::tanh);
            bwd.row_mut(t).assign(&h);
        }
        let mut out = x.clone();
        out.slice_mut(s![..len, ..half]).scaled_add(1.0, &fwd);
        out.slice_mut(s![..len, half..]).scaled_add(1.0, &bwd);
        (out, RecurrentCache { input: x.clone(), len, fwd, bwd })
    }

    pub fn backward(&self, dout: &Array2<f64>, c: &RecurrentCache, g: &mut RecurrentLayer) -> Array2<f64> {
        let d = dout.ncols();
        let half = d / 2;
        let len = c.len;
        let x = c.input.slice(s![..len, ..]).to_owned();

        let mut d_pre_f = Array2::zeros((len, half));
        let mut carry = Array1::<f64>::zeros(half);
        for t in (0..len).rev() {
            let dh = &dout.slice(s![t, ..half]) + &carry;
            let h = c.fwd.row(t);
            let dpre = dh * &h.mapv(|v| 1.0 - v * v);
            if t > 0 {
                let prev = c.fwd.row(t - 1);
                g.fwd_hidden += &outer(&prev.to_owned(), &dpre);
            }
            carry = self.fwd_hidden.dot(&dpre);
            d_pre_f.row_mut(t).assign(&dpre);
        }

        let mut d_pre_b = Array2::zeros((len, half));
        let mut carry = Array1::<f64>::zeros(half);
        for t in 0..len {
            let dh = &dout.slice(s![t, half..]) + &carry;
            let h = c.bwd.row(t);
            let dpre = dh * &h.mapv(|v| 1.0 - v * v);
            if t + 1 < len {
                let next = c.bwd.row(t + 1);
                g.bwd_hidden += &outer(&next.to_owned(), &dpre);
            }
            carry = self.bwd_hidden.dot(&dpre);
            d_pre_b.row_mut(t).assign(&dpre);
        }

        let mut dx = dout.clone();
        let dx_f = self.fwd_input.backward(&x, &d_pre_f, &mut g.fwd_input);
        let dx_b = self.bwd_input.backward(&x, &d_pre_b, &mut g.bwd_input);
        let mut valid = dx.slice_mut(s![..len, ..]);
        valid += &dx_f;
        valid += &dx_b;
        dx
    }

    pub(crate) fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.fwd_input.refs(&format!("{prefix}.fwd_input"), out);
        ref2(out, format!("{prefix}.fwd_hidden"), &self.fwd_hidden);
        self.bwd_input.refs(&format!("{prefix}.bwd_input"), out);
        ref2(out, format!("{prefix}.bwd_hidden"), &self.bwd_hidden);
    }

    pub(crate) fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.fwd_input.muts(&format!("{prefix}.fwd_input"), out);
        mut2(out, format!("{prefix}.fwd_hidden"), &mut self.fwd_hidden);
        self.bwd_input.muts(&format!("{prefix}.bwd_input"), out);
        mut2(out, format!("{prefix}.bwd_hidden"), &mut self.bwd_hidden);
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(ndarray::Axis(1));
    let row = b.view().insert_axis(ndarray::Axis(0));
    col.dot(&row)
}
