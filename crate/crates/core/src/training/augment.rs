use rand::Rng;

use crate::baselines::downsample_bilinear;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor};

use super::substream;

/// Resize-then-crop geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    /// Short side after resizing.
    pub base: usize,
    pub crop: usize,
}

fn crop_flip<T: Real>(
    img: &Tensor<T>,
    top: usize,
    left: usize,
    crop: usize,
    flip: bool,
) -> Tensor<T> {
    let [_, c, h, w] = img.shape();
    debug_assert!(top + crop <= h && left + crop <= w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * crop * crop);
    for ch in 0..c {
        for y in 0..crop {
            let row = &src[(ch * h + top + y) * w + left..][..crop];
            if flip {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    Tensor::from_vec([1, c, crop, crop], out).expect("crop size")
}

/// One view of a single image (batch 1): resize so the short side is
/// `base`, then a random crop with a 50% horizontal flip in training mode or
/// the centre crop in evaluation mode.
pub fn augment_sample<T: Real, R: Rng + ?Sized>(
    image: &Tensor<T>,
    base: usize,
    crop: usize,
    train_mode: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let [n, _, h, w] = image.shape();
    if n != 1 {
        return Err(Error::invalid(format!(
            "augment_sample expects one image, got {n}"
        )));
    }
    if h == 0 || w == 0 || base == 0 {
        return Err(Error::invalid("augment_sample: empty image or zero base"));
    }
    let (rh, rw) = if h <= w {
        (base, ((w * base) as f64 / h as f64).round() as usize)
    } else {
        (((h * base) as f64 / w as f64).round() as usize, base)
    };
    let resized = downsample_bilinear(image, rh, rw)?;
    if rh < crop || rw < crop {
        return Err(Error::invalid(format!(
            "image {rh}x{rw} after resize is smaller than the {crop}x{crop} crop"
        )));
    }
    if train_mode {
        let top = rng.random_range(0..=rh - crop);
        let left = rng.random_range(0..=rw - crop);
        let flip = rng.random_bool(0.5);
        Ok(crop_flip(&resized, top, left, crop, flip))
    } else {
        Ok(crop_flip(
            &resized,
            (rh - crop) / 2,
            (rw - crop) / 2,
            crop,
            false,
        ))
    }
}

/// Views of every row of `batch`. Row `pos` draws from its own stream keyed
/// by `(seed, epoch, keys[pos])`, so results depend neither on thread
/// scheduling nor on batch composition.
pub fn augment_batch<T: Real>(
    batch: &Tensor<T>,
    keys: &[usize],
    aug: Augment,
    train_mode: bool,
    seed: u64,
    epoch: usize,
) -> Result<Tensor<T>> {
    if keys.len() != batch.batch() {
        return Err(Error::shape(
            "augment_batch",
            format!("{} rows but {} stream keys", batch.batch(), keys.len()),
        ));
    }
    let [_, c, h, w] = batch.shape();
    let views = par::map_indexed(keys.len(), |pos| {
        let one = Tensor::from_vec([1, c, h, w], batch.sample(pos).to_vec())?;
        let stream = ((epoch as u64 + 1) << 32) | keys[pos] as u64;
        augment_sample(
            &one,
            aug.base,
            aug.crop,
            train_mode,
            &mut substream(seed, stream),
        )
    });
    Tensor::stack(&views.into_iter().collect::<Result<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;
    use crate::training::seeded_rng;

    #[test]
    fn eval_mode_is_deterministic() {
        let x = random_tensor::<f32>([1, 3, 32, 32], 1);
        let a = augment_sample(&x, 40, 32, false, &mut seeded_rng(1)).unwrap();
        let b = augment_sample(&x, 40, 32, false, &mut seeded_rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_has_crop_shape() {
        let x = random_tensor::<f32>([1, 3, 32, 48], 2);
        let mut rng = seeded_rng(3);
        for _ in 0..20 {
            assert_eq!(
                augment_sample(&x, 40, 32, true, &mut rng).unwrap().shape(),
                [1, 3, 32, 32]
            );
        }
    }

    #[test]
    fn flip_reverses_rows() {
        let x = random_tensor::<f32>([1, 2, 6, 6], 4);
        let plain = crop_flip(&x, 1, 2, 4, false);
        let flipped = crop_flip(&x, 1, 2, 4, true);
        for r in 0..8 {
            let a = &plain.data()[r * 4..r * 4 + 4];
            let b: Vec<f32> = flipped.data()[r * 4..r * 4 + 4]
                .iter()
                .rev()
                .copied()
                .collect();
            assert_eq!(a, &b[..]);
        }
    }

    #[test]
    fn base_equal_to_size_gives_identity_centre_crop() {
        let x = random_tensor::<f32>([1, 1, 8, 8], 5);
        assert_eq!(
            augment_sample(&x, 8, 8, false, &mut seeded_rng(0)).unwrap(),
            x
        );
    }

    #[test]
    fn crop_larger_than_resized_rejected() {
        let x = random_tensor::<f32>([1, 1, 8, 8], 6);
        assert!(augment_sample(&x, 8, 16, true, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn batch_views_independent_of_threading() {
        let x = random_tensor::<f32>([6, 3, 8, 8], 7);
        let aug = Augment { base: 10, crop: 8 };
        let keys = [5, 0, 3, 1, 2, 4];
        let a = augment_batch(&x, &keys, aug, true, 9, 2).unwrap();
        crate::par::set_sequential(true);
        let b = augment_batch(&x, &keys, aug, true, 9, 2).unwrap();
        crate::par::set_sequential(false);
        assert_eq!(a, b);
        // a row's view depends only on its key
        let sub = augment_batch(&x.gather(&[1]), &[0], aug, true, 9, 2).unwrap();
        assert_eq!(sub.data(), a.sample(1));
    }
}
