//! Shared helpers for unit tests.

use rand::Rng;

use crate::tensor::{Real, Tensor};
use crate::training::seeded_rng;

/// Uniform `[-1, 1)` tensor from a fixed seed.
pub fn random_tensor<T: Real>(shape: [usize; 4], seed: u64) -> Tensor<T> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Direct nested-loop convolution, weight `(out, in, kh, kw)`.
pub fn nested_conv<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let [n, c, h, wd] = x.shape();
    let [o, _, kh, kw] = w.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, o, oh, ow]);
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b.data()[oc].as_f64());
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                    .as_f64()
                                    * w.data()[((oc * c + ic) * kh + ky) * kw + kx].as_f64();
                            }
                        }
                    }
                    out.data_mut()[((b * o + oc) * oh + y) * ow + xx] = T::from_f64_lossy(acc);
                }
            }
        }
    }
    out
}
