//! Weight and bias initialization.

use super::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian weights with variance `1 / fan_in` (the layer reads `fan_in`
/// inputs; rows index inputs, columns outputs).
pub fn xavier_init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let std = (1.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(fan_in, fan_out, data)
}

/// Small positive constant bias so that ReLU units start active.
pub fn bias_init(dim: usize) -> Tensor {
    Tensor::filled(1, dim, 0.01)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sample_variance_tracks_one_over_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = xavier_init(100, 1000, &mut rng);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((0.009..=0.011).contains(&var), "variance {var}");
    }

    #[test]
    fn bias_is_constant_small_positive() {
        let b = bias_init(7);
        assert_eq!(b.shape(), [1, 7]);
        assert!(b.data().iter().all(|&x| x == 0.01));
    }
}
