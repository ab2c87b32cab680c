//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compares `analytic` against `(L(θ + h·eᵢ) − L(θ − h·eᵢ)) / 2h` on `sample`
/// coordinates drawn without replacement (all of them when `sample` exceeds
/// the parameter count). Returns the largest relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn finite_diff_check<F>(loss: F, theta: &[f64], analytic: &[f64], h: f64, sample_size: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient and parameter lengths differ");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = theta.len();
    let coords = sample(&mut rng, n, sample_size.min(n));
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        probe[i] = theta[i] + h;
        let up = loss(&probe);
        probe[i] = theta[i] - h;
        let down = loss(&probe);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let c = [0.5, -2.0, 3.25, 0.0];
        let loss = |t: &[f64]| t.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let err = finite_diff_check(loss, &[1.0, 2.0, -1.0, 0.3], &c, 1e-3, 10, 0);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let loss = |t: &[f64]| t[0] * t[0] + t[1].sin();
        let theta = [0.7, 0.2];
        let good = [1.4, 0.2f64.cos()];
        assert!(finite_diff_check(loss, &theta, &good, 1e-4, 2, 0) < 1e-7);
        let bad = [1.4, 0.0];
        assert!(finite_diff_check(loss, &theta, &bad, 1e-4, 2, 0) > 0.5);
    }
}
