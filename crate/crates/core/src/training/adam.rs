//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(1e-3)
    }
}

/// First and second moment estimates, flat in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState { m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }
}

/// One update of `params` from `grads`. Rejects non-finite gradients before
/// touching anything.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}` at step {}", state.step + 1)));
    }
    let n = params.num_params();
    if grads.num_params() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "optimizer state sized {} for {n} parameters",
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut off = 0;
    for (p, g) in params.params_mut().into_iter().zip(grads.params()) {
        for (j, (w, &gj)) in p.data.iter_mut().zip(g.data).enumerate() {
            let k = off + j;
            state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * gj;
            state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = state.m[k] / bc1;
            let v_hat = state.v[k] / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        off += p.data.len();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{mut1, ref1, ParamMut, ParamRef};
    use ndarray::{array, Array1};

    #[derive(Clone, Debug, PartialEq)]
    struct Vector(Array1<f64>);

    impl Parameters for Vector {
        fn params(&self) -> Vec<ParamRef<'_>> {
            let mut out = Vec::new();
            ref1(&mut out, "v".into(), &self.0);
            out
        }
        fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
            let mut out = Vec::new();
            mut1(&mut out, "v".into(), &mut self.0);
            out
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Vector(array![1.0, -2.0]);
        let mut s = AdamState::new(2);
        adam_step(&mut p, &Vector(array![0.0, 0.0]), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.0, array![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_sign() {
        let mut p = Vector(array![0.0, 0.0, 0.0]);
        let mut s = AdamState::new(3);
        let cfg = AdamConfig { epsilon: 0.0, ..AdamConfig::with_lr(0.01) };
        adam_step(&mut p, &Vector(array![3.0, -0.5, 1e-3]), &mut s, &cfg).unwrap();
        for (w, expect) in p.0.iter().zip([-0.01, 0.01, -0.01]) {
            assert!((w - expect).abs() < 1e-15, "{w}");
        }
    }

    #[test]
    fn replay_from_saved_state_matches() {
        let cfg = AdamConfig::with_lr(0.1);
        let g1 = Vector(array![0.3, -1.0]);
        let g2 = Vector(array![-0.2, 0.5]);
        let mut p = Vector(array![1.0, 1.0]);
        let mut s = AdamState::new(2);
        adam_step(&mut p, &g1, &mut s, &cfg).unwrap();
        let (saved_p, saved_s) = (p.clone(), s.clone());
        adam_step(&mut p, &g2, &mut s, &cfg).unwrap();
        let (mut q, mut r) = (saved_p, saved_s);
        adam_step(&mut q, &g2, &mut r, &cfg).unwrap();
        assert_eq!(p, q);
        assert_eq!(s, r);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Vector(array![1.0]);
        let mut s = AdamState::new(1);
        let err = adam_step(&mut p, &Vector(array![f64::NAN]), &mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(s.step, 0);
        assert_eq!(p.0, array![1.0]);
    }
}
