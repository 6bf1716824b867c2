use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor};

/// Max pooling output together with the flat per-sample argmax of every
/// output element.
#[derive(Clone, Debug)]
pub struct Pooled<T: Real> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
    input_shape: [usize; 4],
}

pub fn maxpool2d<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Pooled<T>> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d: window and stride must be >= 1"));
    }
    let [n, c, h, w] = input.shape();
    if h < window
        || w < window
        || !(h - window).is_multiple_of(stride)
        || !(w - window).is_multiple_of(stride)
    {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial size {h}x{w} does not tile with window {window}, stride {stride}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let per = c * oh * ow;
    let parts = par::map_indexed(n, |i| {
        let x = input.sample(i);
        let mut out = vec![T::zero(); per];
        let mut argmax = vec![0usize; per];
        for ch in 0..c {
            let plane = ch * h * w;
            for oy in 0..oh {
                let row0 = plane + oy * stride * w;
                let dst = (ch * oh + oy) * ow;
                if window == 2 && stride == 2 {
                    let (r0, r1) = (&x[row0..row0 + w], &x[row0 + w..row0 + 2 * w]);
                    let cells = r0.chunks_exact(2).zip(r1.chunks_exact(2));
                    for (ox, ((a, b), (o, am))) in cells
                        .zip(
                            out[dst..dst + ow]
                                .iter_mut()
                                .zip(&mut argmax[dst..dst + ow]),
                        )
                        .enumerate()
                    {
                        let base = row0 + 2 * ox;
                        let (mut bv, mut bi) = (a[0], base);
                        for (v, j) in [(a[1], base + 1), (b[0], base + w), (b[1], base + w + 1)] {
                            if v > bv {
                                bv = v;
                                bi = j;
                            }
                        }
                        *o = bv;
                        *am = bi;
                    }
                    continue;
                }
                for ox in 0..ow {
                    let mut best = row0 + ox * stride;
                    let mut best_v = x[best];
                    for ky in 0..window {
                        let base = row0 + ky * w + ox * stride;
                        for (kx, &v) in x[base..base + window].iter().enumerate() {
                            // strict comparison keeps the first maximum in scan order
                            if v > best_v {
                                best_v = v;
                                best = base + kx;
                            }
                        }
                    }
                    out[dst + ox] = best_v;
                    argmax[dst + ox] = best;
                }
            }
        }
        (out, argmax)
    });
    let mut out = Vec::with_capacity(n * per);
    let mut argmax = Vec::with_capacity(n * per);
    for (o, a) in parts {
        out.extend(o);
        argmax.extend(a);
    }
    Ok(Pooled {
        output: Tensor::from_vec([n, c, oh, ow], out)?,
        argmax,
        input_shape: [n, c, h, w],
    })
}

pub fn maxpool2d_grad<T: Real>(grad_out: &Tensor<T>, pooled: &Pooled<T>) -> Result<Tensor<T>> {
    pooled
        .output
        .expect_same_shape("maxpool2d_grad", grad_out)?;
    let mut gx = Tensor::zeros(pooled.input_shape);
    let per = pooled.output.sample_len();
    for i in 0..grad_out.batch() {
        let g = grad_out.sample(i);
        let idx = &pooled.argmax[i * per..(i + 1) * per];
        let dst = gx.sample_mut(i);
        for (&gv, &j) in g.iter().zip(idx) {
            dst[j] += gv;
        }
    }
    Ok(gx)
}

/// Mean over each channel plane, giving (N, C, 1, 1).
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let inv = T::one() / T::from_usize(plane).expect("plane size");
    let data = input
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_grad<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: [usize; 4],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "global_avg_pool_grad",
            format!(
                "grad_out {:?} for input {:?}",
                grad_out.shape(),
                input_shape
            ),
        ));
    }
    let plane = h * w;
    let inv = T::one() / T::from_usize(plane).expect("plane size");
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::from_vec(input_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_tensor;

    #[test]
    fn two_by_two_max() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::<f32>::full([1, 1, 2, 2], 7.0);
        let p = maxpool2d(&x, 2, 2).unwrap();
        let g = maxpool2d_grad(&Tensor::full([1, 1, 1, 1], 1.0), &p).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let x = random_tensor::<f32>([1, 2, 8, 8], 21);
        let p = maxpool2d(&x, 2, 2).unwrap();
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..2 {
                        for kx in 0..2 {
                            m = m.max(x.data()[c * 64 + (2 * oy + ky) * 8 + 2 * ox + kx]);
                        }
                    }
                    assert_eq!(p.output.data()[c * 16 + oy * 4 + ox], m);
                }
            }
        }
    }

    #[test]
    fn rejects_non_divisible() {
        let x = Tensor::<f32>::zeros([1, 1, 5, 4]);
        assert!(maxpool2d(&x, 2, 2).is_err());
    }

    #[test]
    fn global_pool_and_grad() {
        let x = Tensor::<f64>::from_vec([1, 2, 1, 2], vec![1., 3., -2., 2.]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.0, 0.0]);
        let g = global_avg_pool_grad(
            &Tensor::from_vec([1, 2, 1, 1], vec![2., 4.]).unwrap(),
            [1, 2, 1, 2],
        )
        .unwrap();
        assert_eq!(g.data(), &[1., 1., 2., 2.]);
    }
}
