use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// I.i.d. `N(0, variance)` samples shaped like `shape`.
pub fn gaussian_perturbation<T: Real, R: Rng + ?Sized>(
    shape: [usize; 4],
    variance: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!(
            "noise variance must be >= 0, got {variance}"
        )));
    }
    let n: usize = shape.iter().product();
    if variance == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let dist = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let data = (0..n)
        .map(|_| T::from_f64_lossy(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Adds zero-mean Gaussian noise of the given variance, then clamps to `[0, 1]`.
pub fn add_gaussian_noise<T: Real, R: Rng + ?Sized>(
    image: &Tensor<T>,
    variance: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let noise = gaussian_perturbation::<T, R>(image.shape(), variance, rng)?;
    if variance == 0.0 {
        return Ok(image.clone());
    }
    image.zip_map(&noise, |x, e| (x + e).max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::seeded_rng;

    #[test]
    fn zero_variance_is_identity() {
        let x = Tensor::<f32>::full([1, 3, 4, 4], 0.3);
        assert_eq!(add_gaussian_noise(&x, 0.0, &mut seeded_rng(0)).unwrap(), x);
    }

    #[test]
    fn negative_variance_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        assert!(add_gaussian_noise(&x, -0.1, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn output_clamped() {
        let x = Tensor::<f32>::full([1, 3, 16, 16], 0.95);
        let y = add_gaussian_noise(&x, 0.1, &mut seeded_rng(1)).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(y.data().contains(&1.0));
    }

    #[test]
    fn pre_clamp_mean_within_three_sigma() {
        let n = 1_000_000;
        let e =
            gaussian_perturbation::<f64, _>([1, 1, 1000, 1000], 0.01, &mut seeded_rng(2)).unwrap();
        let mean = e.data().iter().sum::<f64>() / n as f64;
        let sigma = (0.01f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
        let var = e.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 0.01).abs() < 0.0005);
    }
}
