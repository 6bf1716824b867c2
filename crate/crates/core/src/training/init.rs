use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::{Real, Tensor};

/// Seeded generator used everywhere randomness is needed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for an independent sub-stream of `seed`, e.g. one per
/// (stage, epoch, sample) so that parallel consumers stay deterministic.
pub fn substream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Half-width of the Xavier/Glorot uniform range.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// I.i.d. uniform samples on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
///
/// # Panics
/// If either fan is zero.
pub fn xavier_init<T: Real, R: Rng + ?Sized>(
    shape: [usize; 4],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    assert!(
        fan_in > 0 && fan_out > 0,
        "xavier_init: fans must be positive"
    );
    let a = xavier_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data).expect("sized by shape")
}
