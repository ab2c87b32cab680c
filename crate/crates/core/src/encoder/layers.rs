use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::params::{mut1, mut2, ref1, ref2, ParamMut, ParamRef};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: uniform(rng, input, output, bound),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: Array2::zeros((input, output)), bias: Array1::zeros(output) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    pub(crate) fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        ref2(out, format!("{prefix}.weight"), &self.weight);
        ref1(out, format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        mut2(out, format!("{prefix}.weight"), &mut self.weight);
        mut1(out, format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        LayerNorm { gamma: Array1::ones(d), beta: Array1::zeros(d) }
    }

    pub fn zeros(d: usize) -> Self {
        LayerNorm { gamma: Array1::zeros(d), beta: Array1::zeros(d) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, dy: &Array2<f64>, cache: &LayerNormCache, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let inner = dxhat * d - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        inner * &(&cache.inv_std / d).insert_axis(Axis(1))
    }

    pub(crate) fn refs<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        ref1(out, format!("{prefix}.gamma"), &self.gamma);
        ref1(out, format!("{prefix}.beta"), &self.beta);
    }

    pub(crate) fn muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        mut1(out, format!("{prefix}.gamma"), &mut self.gamma);
        mut1(out, format!("{prefix}.beta"), &mut self.beta);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction. Entries equal to `-inf` get
/// probability exactly zero.
pub fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((gelu_grad(x) - numeric(gelu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_masks_negative_infinity() {
        let mut s = array![[1.0, 2.0, f64::NEG_INFINITY]];
        softmax_rows(&mut s);
        assert_eq!(s[[0, 2]], 0.0);
        assert!((s.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = uniform(&mut rng, 3, 5, 1.0);
        let mut ln = LayerNorm::identity(5);
        ln.gamma = Array1::from_vec(vec![0.5, 1.5, -1.0, 2.0, 0.3]);
        ln.beta = Array1::from_vec(vec![0.1, 0.0, 0.2, -0.3, 0.0]);
        let w = uniform(&mut rng, 3, 5, 1.0);
        let loss = |x: &Array2<f64>| (ln.forward(x).0 * &w).sum();
        let (_, cache) = ln.forward(&x);
        let mut g = LayerNorm::zeros(5);
        let dx = ln.backward(&w, &cache, &mut g);
        for i in 0..3 {
            for j in 0..5 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((num - dx[[i, j]]).abs() < 1e-7, "{num} vs {}", dx[[i, j]]);
            }
        }
    }
}
