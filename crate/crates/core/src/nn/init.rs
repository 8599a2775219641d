use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// He (Kaiming) normal initialization: i.i.d. `Normal(0, 2 / fan_in)`.
pub fn he_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(config_err!("he_init needs fan_in > 0"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| config_err!("bad normal: {e}"))?;
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data)
}

/// Biases start at zero.
pub fn zero_bias(len: usize) -> Result<Tensor> {
    Tensor::zeros(&[len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn variance_matches_two_over_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = he_init(&[100_000], 2, &mut rng).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.03, "sample variance {var}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = he_init(&[4, 5], 7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = he_init(&[4, 5], 7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bias_is_zero() {
        assert!(zero_bias(9).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(he_init(&[2], 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
