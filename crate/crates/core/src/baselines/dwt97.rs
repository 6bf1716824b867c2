//! Single-level 2-D CDF 9/7 wavelet transform by lifting.
//!
//! Rows are transformed first, then columns, with whole-sample symmetric
//! extension at the borders. Low-pass samples are scaled by `ZETA` and
//! high-pass samples by `1 / ZETA`, which makes the transform nearly
//! energy preserving. Arithmetic is done in f64 whatever the tensor type.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const ALPHA: f64 = -1.586_134_342_059_924;
pub const BETA: f64 = -0.052_980_118_572_961;
pub const GAMMA: f64 = 0.882_911_075_530_934;
pub const DELTA: f64 = 0.443_506_852_043_971;
pub const ZETA: f64 = 1.149_604_398_860_241;

/// The four half-resolution sub-bands.
#[derive(Clone, Debug, PartialEq)]
pub struct DwtBands<T: Real> {
    /// Approximation: low-pass in both directions.
    pub ca: Tensor<T>,
    /// Horizontal detail: high-pass vertically, low-pass horizontally.
    pub ch: Tensor<T>,
    /// Vertical detail: low-pass vertically, high-pass horizontally.
    pub cv: Tensor<T>,
    /// Diagonal detail: high-pass in both directions.
    pub cd: Tensor<T>,
}

impl<T: Real> DwtBands<T> {
    /// `cH | cV | cD` along channels.
    pub fn details(&self) -> Tensor<T> {
        Tensor::concat_channels(&[&self.ch, &self.cv, &self.cd]).expect("bands share shape")
    }

    pub fn energy(&self) -> f64 {
        self.ca.sum_sq() + self.ch.sum_sq() + self.cv.sum_sq() + self.cd.sum_sq()
    }
}

/// In-place interleaved lifting on a line of even length.
fn lift_forward(x: &mut [f64]) {
    let n = x.len();
    for (coef, odd) in [(ALPHA, true), (BETA, false), (GAMMA, true), (DELTA, false)] {
        lift_step(x, n, coef, odd);
    }
    for (i, v) in x.iter_mut().enumerate() {
        if i % 2 == 0 {
            *v *= ZETA;
        } else {
            *v /= ZETA;
        }
    }
}

fn lift_inverse(x: &mut [f64]) {
    let n = x.len();
    for (i, v) in x.iter_mut().enumerate() {
        if i % 2 == 0 {
            *v /= ZETA;
        } else {
            *v *= ZETA;
        }
    }
    for (coef, odd) in [(DELTA, false), (GAMMA, true), (BETA, false), (ALPHA, true)] {
        lift_step(x, n, -coef, odd);
    }
}

#[inline]
fn lift_step(x: &mut [f64], n: usize, coef: f64, odd: bool) {
    let start = usize::from(odd);
    let mut i = start;
    while i < n {
        let left = if i == 0 { x[1] } else { x[i - 1] };
        let right = if i + 1 < n { x[i + 1] } else { x[i - 1] };
        x[i] += coef * (left + right);
        i += 2;
    }
}

/// Transforms one (H, W) plane into its four quadrants.
fn plane_forward(plane: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let mut rows = plane.to_vec();
    let mut line = vec![0.0; w.max(h)];
    // rows: low half then high half
    for r in 0..h {
        let row = &mut rows[r * w..(r + 1) * w];
        lift_forward(row);
        for k in 0..w / 2 {
            line[k] = row[2 * k];
            line[w / 2 + k] = row[2 * k + 1];
        }
        row.copy_from_slice(&line[..w]);
    }
    let mut col = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = rows[r * w + c];
        }
        lift_forward(&mut col);
        for k in 0..h / 2 {
            rows[k * w + c] = col[2 * k];
            rows[(h / 2 + k) * w + c] = col[2 * k + 1];
        }
    }
    let (hh, hw) = (h / 2, w / 2);
    let quad = |r0: usize, c0: usize| -> Vec<f64> {
        (0..hh)
            .flat_map(|r| rows[(r0 + r) * w + c0..(r0 + r) * w + c0 + hw].to_vec())
            .collect()
    };
    // quadrant rows index the vertical filter, columns the horizontal one
    [quad(0, 0), quad(hh, 0), quad(0, hw), quad(hh, hw)]
}

fn plane_inverse(quads: [&[f64]; 4], hh: usize, hw: usize) -> Vec<f64> {
    let (h, w) = (hh * 2, hw * 2);
    let mut buf = vec![0.0; h * w];
    let offsets = [(0, 0), (hh, 0), (0, hw), (hh, hw)];
    for (q, (r0, c0)) in quads.iter().zip(offsets) {
        for r in 0..hh {
            buf[(r0 + r) * w + c0..(r0 + r) * w + c0 + hw]
                .copy_from_slice(&q[r * hw..(r + 1) * hw]);
        }
    }
    let mut col = vec![0.0; h];
    for c in 0..w {
        for k in 0..hh {
            col[2 * k] = buf[k * w + c];
            col[2 * k + 1] = buf[(hh + k) * w + c];
        }
        lift_inverse(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
    let mut line = vec![0.0; w];
    for r in 0..h {
        let row = &mut buf[r * w..(r + 1) * w];
        for k in 0..hw {
            line[2 * k] = row[k];
            line[2 * k + 1] = row[hw + k];
        }
        lift_inverse(&mut line);
        row.copy_from_slice(&line);
    }
    buf
}

pub fn dwt97_forward<T: Real>(image: &Tensor<T>) -> Result<DwtBands<T>> {
    let [n, c, h, w] = image.shape();
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(Error::shape(
            "dwt97_forward",
            format!("spatial size {h}x{w} must be even"),
        ));
    }
    let half = [n, c, h / 2, w / 2];
    let mut bands: [Vec<T>; 4] = Default::default();
    for plane in image.data().chunks(h * w) {
        let p: Vec<f64> = plane.iter().map(|v| v.as_f64()).collect();
        for (dst, q) in bands.iter_mut().zip(plane_forward(&p, h, w)) {
            dst.extend(q.into_iter().map(T::from_f64_lossy));
        }
    }
    let [ca, ch, cv, cd] = bands;
    Ok(DwtBands {
        ca: Tensor::from_vec(half, ca)?,
        ch: Tensor::from_vec(half, ch)?,
        cv: Tensor::from_vec(half, cv)?,
        cd: Tensor::from_vec(half, cd)?,
    })
}

pub fn dwt97_inverse<T: Real>(bands: &DwtBands<T>) -> Result<Tensor<T>> {
    let shape = bands.ca.shape();
    for b in [&bands.ch, &bands.cv, &bands.cd] {
        if b.shape() != shape {
            return Err(Error::shape(
                "dwt97_inverse",
                format!("band shapes {:?} and {:?} differ", shape, b.shape()),
            ));
        }
    }
    let [n, c, hh, hw] = shape;
    let plane = hh * hw;
    let mut out = Vec::with_capacity(n * c * plane * 4);
    let to64 = |t: &Tensor<T>, i: usize| -> Vec<f64> {
        t.data()[i * plane..(i + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect()
    };
    for i in 0..n * c {
        let q = [
            to64(&bands.ca, i),
            to64(&bands.ch, i),
            to64(&bands.cv, i),
            to64(&bands.cd, i),
        ];
        let rec = plane_inverse([&q[0], &q[1], &q[2], &q[3]], hh, hw);
        out.extend(rec.into_iter().map(T::from_f64_lossy));
    }
    Tensor::from_vec([n, c, hh * 2, hw * 2], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;

    #[test]
    fn constant_image_has_no_detail() {
        let img = Tensor::<f32>::full([1, 3, 16, 16], 0.7);
        let b = dwt97_forward(&img).unwrap();
        for band in [&b.ch, &b.cv, &b.cd] {
            assert!(band.data().iter().all(|v| v.abs() < 1e-10));
        }
        // 2-D DC gain of the approximation band is 2
        assert!(b.ca.data().iter().all(|v| (v - 1.4).abs() < 1e-5));
    }

    #[test]
    fn round_trip_f64() {
        let img = random_tensor::<f64>([2, 3, 16, 12], 3);
        let rec = dwt97_inverse(&dwt97_forward(&img).unwrap()).unwrap();
        assert!(img.max_abs_diff(&rec).unwrap() < 1e-12);
    }

    #[test]
    fn zero_bands_give_zero_image() {
        let z = Tensor::<f32>::zeros([1, 1, 4, 4]);
        let bands = DwtBands {
            ca: z.clone(),
            ch: z.clone(),
            cv: z.clone(),
            cd: z,
        };
        let img = dwt97_inverse(&bands).unwrap();
        assert_eq!(img.shape(), [1, 1, 8, 8]);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn approximation_only_inverts_to_constant() {
        let z = Tensor::<f64>::zeros([1, 1, 4, 4]);
        let bands = DwtBands {
            ca: Tensor::full([1, 1, 4, 4], 2.0),
            ch: z.clone(),
            cv: z.clone(),
            cd: z,
        };
        let img = dwt97_inverse(&bands).unwrap();
        let first = img.data()[0];
        assert!(img.data().iter().all(|v| (v - first).abs() < 1e-12));
        assert!((first - 1.0).abs() < 1e-12);
    }

    #[test]
    fn odd_sizes_and_band_mismatch_rejected() {
        assert!(dwt97_forward(&Tensor::<f32>::zeros([1, 1, 5, 4])).is_err());
        let bands = DwtBands {
            ca: Tensor::<f32>::zeros([1, 1, 2, 2]),
            ch: Tensor::zeros([1, 1, 2, 2]),
            cv: Tensor::zeros([1, 1, 2, 3]),
            cd: Tensor::zeros([1, 1, 2, 2]),
        };
        assert!(dwt97_inverse(&bands).is_err());
    }
}
