//! Procedural labelled images, used where real datasets are unavailable
//! (tests, smoke runs). Each class is a shape or texture family drawn with
//! random colours, placement, frequency and pixel noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::substream;

const PATTERNS: usize = 10;

fn mask<R: Rng>(class: usize, size: usize, rng: &mut R) -> Vec<f64> {
    let freq = rng.random_range(2.5..5.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (cx, cy) = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
    let radius = rng.random_range(0.18..0.3);
    let theta = rng.random_range(0.0..PI);
    let mut m = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let (du, dv) = (u - cx, v - cy);
            let r = (du * du + dv * dv).sqrt();
            let val = match class {
                0 => 0.5 + 0.5 * (2.0 * PI * freq * v + phase).sin(),
                1 => 0.5 + 0.5 * (2.0 * PI * freq * u + phase).sin(),
                2 => 0.5 + 0.5 * (2.0 * PI * freq * (u + v) / 2f64.sqrt() + phase).sin(),
                3 => {
                    let s = ((u * freq).floor() + (v * freq).floor()) as i64;
                    (s.rem_euclid(2)) as f64
                }
                4 => f64::from(r < radius),
                5 => f64::from((r - radius).abs() < 0.06),
                6 => f64::from(du.abs() < radius * 0.9 && dv.abs() < radius * 0.9),
                7 => f64::from(du.abs() < 0.07 || dv.abs() < 0.07),
                8 => (-(r * r) / (2.0 * (radius * 0.6).powi(2))).exp(),
                _ => f64::from(theta.cos() * du + theta.sin() * dv > 0.0),
            };
            m.push(val);
        }
    }
    m
}

/// `n` balanced samples (`label = i mod classes`), deterministic in `seed`.
pub fn synthetic_dataset(
    n: usize,
    classes: usize,
    channels: usize,
    size: usize,
    seed: u64,
    split: Split,
) -> Result<LabeledDataset> {
    if classes == 0 || classes > PATTERNS {
        return Err(Error::invalid(format!(
            "synthetic data supports 1..={PATTERNS} classes"
        )));
    }
    if n == 0 || size == 0 || channels == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs n, size and channels >= 1",
        ));
    }
    let salt = match split {
        Split::Train => 0x7261_696e,
        Split::Test => 0x7465_7374,
    };
    let plane = size * size;
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let mut data = Vec::with_capacity(n * channels * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let mut rng = substream(seed ^ salt, i as u64);
        let m = mask(class, size, &mut rng);
        for _ in 0..channels {
            let bg: f64 = rng.random_range(0.1..0.9);
            let delta = rng.random_range(0.3..0.5) * if bg > 0.5 { -1.0 } else { 1.0 };
            let fg = bg + delta;
            for &mv in &m {
                let px = bg * (1.0 - mv) + fg * mv + noise.sample(&mut rng);
                data.push(px.clamp(0.0, 1.0) as f32);
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(
        Tensor::from_vec([n, channels, size, size], data)?,
        labels,
        classes,
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_balanced_and_in_range() {
        let a = synthetic_dataset(40, 10, 3, 32, 5, Split::Train).unwrap();
        let b = synthetic_dataset(40, 10, 3, 32, 5, Split::Train).unwrap();
        assert_eq!(a, b);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..10 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 4);
        }
        let t = synthetic_dataset(40, 10, 3, 32, 5, Split::Test).unwrap();
        assert_ne!(a.images, t.images);
    }

    #[test]
    fn rejects_too_many_classes() {
        assert!(synthetic_dataset(4, 11, 1, 8, 0, Split::Train).is_err());
    }
}
