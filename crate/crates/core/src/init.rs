//! Seeded parameter initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub type ModelRng = ChaCha8Rng;

/// `U(−1/√fan_in, 1/√fan_in)`.
pub fn fan_in_uniform(rng: &mut ModelRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}

pub fn uniform(rng: &mut ModelRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(lo..hi);
    }
    t
}

/// Inverse of softplus: `y + ln(1 − e^{−y})`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn inverse_softplus_round_trips() {
        for y in [1e-3, 0.01, 0.1, 1.0, 5.0] {
            let x = inverse_softplus(y);
            assert!((crate::autodiff::softplus(x) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn fan_in_bounds_hold() {
        let mut rng = ModelRng::seed_from_u64(1);
        let t = fan_in_uniform(&mut rng, &[8, 16], 16);
        assert!(t.data().iter().all(|v| v.abs() <= 0.25));
    }
}
