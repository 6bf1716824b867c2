//! Direct (im2col + GEMM) convolution and transposed convolution, forward and
//! backward.
//!
//! Convolution weights are laid out `(out, in, kh, kw)`; transposed
//! convolution weights are `(in, out, kh, kw)`, so a transposed convolution
//! with weight `w` is exactly the input-gradient of the convolution with the
//! same `w`.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
    pub transposed: bool,
}

impl ConvSpec {
    /// Square-kernel convolution with bias.
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            has_bias: true,
            transposed: false,
        }
    }

    /// Square-kernel transposed convolution with bias.
    pub fn deconv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            transposed: true,
            ..Self::conv(in_channels, out_channels, kernel, stride, padding)
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("conv spec: stride must be >= 1"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::invalid("conv spec: kernel dims must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("conv spec: channel counts must be >= 1"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [
                self.in_channels,
                self.out_channels,
                self.kernel_h,
                self.kernel_w,
            ]
        } else {
            [
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w,
            ]
        }
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let p = self.padding as isize * 2;
        let (kh, kw, s) = (
            self.kernel_h as isize,
            self.kernel_w as isize,
            self.stride as isize,
        );
        let (oh, ow) = if self.transposed {
            ((h as isize - 1) * s - p + kh, (w as isize - 1) * s - p + kw)
        } else {
            let eh = h as isize + p - kh;
            let ew = w as isize + p - kw;
            if eh < 0 || ew < 0 {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {}x{} larger than padded input {h}x{w}", kh, kw),
                ));
            }
            (eh / s + 1, ew / s + 1)
        };
        if h == 0 || w == 0 || oh <= 0 || ow <= 0 {
            return Err(Error::shape(
                "conv2d",
                format!("output dimension {oh}x{ow} is not positive for input {h}x{w}"),
            ));
        }
        Ok((oh as usize, ow as usize))
    }

    fn patch_len(&self, channels: usize) -> usize {
        channels * self.kernel_h * self.kernel_w
    }
}

/// Gradients of a (transposed) convolution w.r.t. its three arguments.
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Geometry of the strided window walk over an image plane.
#[derive(Clone, Copy)]
struct Window {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    /// Calls `f(first_column, first_source, len)` for every run of in-bounds
    /// taps along an output row; consecutive taps advance the source by
    /// `stride`.
    #[inline]
    fn walk_rows(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.oh * self.ow;
        let (s, pad) = (self.stride, self.pad);
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    // ox valid iff pad <= ox*s + kx < w + pad
                    let lo = pad.saturating_sub(kx).div_ceil(s);
                    let hi = if self.w + pad > kx {
                        ((self.w + pad - kx - 1) / s + 1).min(self.ow)
                    } else {
                        0
                    };
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = (c * self.h + iy as usize) * self.w;
                        f(
                            row * p + oy * self.ow + lo,
                            src_row + lo * s + kx - pad,
                            hi - lo,
                        );
                    }
                }
            }
        }
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(win: &Window, image: &[T], cols: &mut [T]) {
    let (s, pad) = (win.stride, win.pad);
    let (hp, wp) = (win.h + 2 * pad, win.w + 2 * pad);
    // rows read past the padded plane only when the window overhangs it
    let covered = (win.oh - 1) * s + win.kh <= hp && (win.ow - 1) * s + win.kw <= wp;
    if !covered {
        cols.fill(T::zero());
        win.walk_rows(|dst, src, len| {
            for (d, &v) in cols[dst..dst + len]
                .iter_mut()
                .zip(image[src..].iter().step_by(s))
            {
                *d = v;
            }
        });
        return;
    }
    let padded;
    let plane: &[T] = if pad == 0 {
        image
    } else {
        let mut buf = vec![T::zero(); win.channels * hp * wp];
        for (c, dst) in buf.chunks_exact_mut(hp * wp).enumerate() {
            for y in 0..win.h {
                let src = &image[(c * win.h + y) * win.w..][..win.w];
                dst[(y + pad) * wp + pad..][..win.w].copy_from_slice(src);
            }
        }
        padded = buf;
        &padded
    };
    let p = win.oh * win.ow;
    let mut rows = cols.chunks_exact_mut(p);
    for c in 0..win.channels {
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let row = rows.next().expect("patch rows sized by construction");
                for (oy, out) in row.chunks_exact_mut(win.ow).enumerate() {
                    let src = &plane[(c * hp + oy * s + ky) * wp + kx..];
                    if s == 1 && win.ow >= 16 {
                        out.copy_from_slice(&src[..win.ow]);
                    } else if s == 1 {
                        for (d, &v) in out.iter_mut().zip(src) {
                            *d = v;
                        }
                    } else {
                        let src = &src[..(win.ow - 1) * s + 1];
                        for (j, d) in out.iter_mut().enumerate() {
                            *d = src[j * s];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(win: &Window, cols: &[T], image: &mut [T]) {
    let s = win.stride;
    win.walk_rows(|dst, src, len| {
        for (a, &v) in image[src..]
            .iter_mut()
            .step_by(s)
            .zip(&cols[dst..dst + len])
        {
            *a += v;
        }
    });
}

fn check_weight<T: Real>(op: &'static str, weight: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    let expect = spec.weight_shape();
    if weight.shape() != expect {
        let names = if spec.transposed {
            ["in_channels", "out_channels", "kernel_h", "kernel_w"]
        } else {
            ["out_channels", "in_channels", "kernel_h", "kernel_w"]
        };
        let dim = (0..4)
            .find(|&i| weight.shape()[i] != expect[i])
            .unwrap_or(0);
        return Err(Error::shape(
            op,
            format!(
                "weight {} is {} but spec says {} (weight {:?}, expected {:?})",
                names[dim],
                weight.shape()[dim],
                expect[dim],
                weight.shape(),
                expect
            ),
        ));
    }
    Ok(())
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<()> {
    match bias {
        Some(b) if b.len() != spec.out_channels => Err(Error::shape(
            op,
            format!(
                "bias length {} but out_channels is {}",
                b.len(),
                spec.out_channels
            ),
        )),
        Some(_) if !spec.has_bias => Err(Error::invalid(format!(
            "{op}: bias given but spec has_bias = false"
        ))),
        None if spec.has_bias => Err(Error::invalid(format!(
            "{op}: spec has_bias = true but no bias given"
        ))),
        _ => Ok(()),
    }
}

fn check_input<T: Real>(op: &'static str, input: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    if input.channels() != spec.in_channels {
        return Err(Error::shape(
            op,
            format!(
                "input channels is {} but in_channels is {}",
                input.channels(),
                spec.in_channels
            ),
        ));
    }
    Ok(())
}

fn add_bias<T: Real>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            for v in chunk {
                *v += bv;
            }
        }
    }
}

fn concat_samples<T: Real>(shape: [usize; 4], parts: Vec<Vec<T>>) -> Tensor<T> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        data.extend(p);
    }
    Tensor::from_vec(shape, data).expect("per-sample outputs sized by construction")
}

/// Sums per-sample weight and bias gradients in sample order.
fn reduce_in_order<T: Real>(
    parts: &[(Vec<T>, Vec<T>)],
    wlen: usize,
    blen: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); wlen];
    let mut gb = vec![T::zero(); blen];
    for (w, b) in parts {
        for (a, &v) in gw.iter_mut().zip(w) {
            *a += v;
        }
        for (a, &v) in gb.iter_mut().zip(b) {
            *a += v;
        }
    }
    (gw, gb)
}

/// Standard 2-D convolution.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let mut out = conv2d_shared(input, &[(weight, bias)], spec)?;
    Ok(out.pop().expect("one head"))
}

/// Several convolutions of one input sharing a spec (but not weights). The
/// patch matrix is built once per sample.
pub fn conv2d_shared<T: Real>(
    input: &Tensor<T>,
    heads: &[(&Tensor<T>, Option<&Tensor<T>>)],
    spec: &ConvSpec,
) -> Result<Vec<Tensor<T>>> {
    const OP: &str = "conv2d";
    if spec.transposed {
        return Err(Error::invalid("conv2d: spec is transposed; use deconv2d"));
    }
    for (weight, bias) in heads {
        check_weight(OP, weight, spec)?;
        check_bias(OP, *bias, spec)?;
    }
    check_input(OP, input, spec)?;
    let [n, c, h, w] = input.shape();
    let (oh, ow) = spec.output_size(h, w)?;
    let win = Window {
        channels: c,
        h,
        w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        oh,
        ow,
    };
    let k = spec.patch_len(c);
    let p = oh * ow;
    let co = spec.out_channels;
    let stacked: Cow<[T]> = match heads {
        [(w, _)] => Cow::Borrowed(w.data()),
        _ => Cow::Owned(
            heads
                .iter()
                .flat_map(|(w, _)| w.data().iter().copied())
                .collect(),
        ),
    };
    let rows = co * heads.len();
    // one GEMM over the stacked heads keeps narrow outputs efficient
    let run = |cols: &[T]| -> Vec<Vec<T>> {
        let mut out = T::gemm_new(rows, k, p, (&stacked, k as isize, 1), (cols, p as isize, 1));
        if let [(_, bias)] = heads {
            add_bias(&mut out, *bias, p);
            return vec![out];
        }
        out.chunks_exact(co * p)
            .zip(heads)
            .map(|(chunk, (_, bias))| {
                let mut o = chunk.to_vec();
                add_bias(&mut o, *bias, p);
                o
            })
            .collect()
    };
    let parts = par::map_indexed(n, |i| {
        let x = input.sample(i);
        if win.is_identity() {
            run(x)
        } else {
            T::with_scratch(k * p, |cols| {
                im2col(&win, x, cols);
                run(cols)
            })
        }
    });
    let mut per_head: Vec<Vec<Vec<T>>> = (0..heads.len()).map(|_| Vec::with_capacity(n)).collect();
    for sample in parts {
        for (dst, out) in per_head.iter_mut().zip(sample) {
            dst.push(out);
        }
    }
    Ok(per_head
        .into_iter()
        .map(|parts| concat_samples([n, co, oh, ow], parts))
        .collect())
}

/// Reverse-mode pass of [`conv2d`] for upstream gradient `grad_out`.
pub fn conv2d_grad<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    const OP: &str = "conv2d_grad";
    if spec.transposed {
        return Err(Error::invalid(
            "conv2d_grad: spec is transposed; use deconv2d_grad",
        ));
    }
    check_weight(OP, weight, spec)?;
    check_input(OP, input, spec)?;
    let [n, c, h, w] = input.shape();
    let (oh, ow) = spec.output_size(h, w)?;
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, oh, ow] {
        return Err(Error::shape(
            OP,
            format!(
                "grad_out {:?} but forward output is {:?}",
                grad_out.shape(),
                [n, co, oh, ow]
            ),
        ));
    }
    let win = Window {
        channels: c,
        h,
        w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        oh,
        ow,
    };
    let k = spec.patch_len(c);
    let p = oh * ow;
    let parts = par::map_indexed(n, |i| {
        let x = input.sample(i);
        let g = grad_out.sample(i);
        let owned;
        let cols: &[T] = if win.is_identity() {
            x
        } else {
            let mut buf = vec![T::zero(); k * p];
            im2col(&win, x, &mut buf);
            owned = buf;
            &owned
        };
        // dW = g (co x p) * cols^T (p x k)
        let mut gw = vec![T::zero(); co * k];
        T::gemm(
            co,
            p,
            k,
            T::one(),
            (g, p as isize, 1),
            (cols, 1, p as isize),
            T::zero(),
            (&mut gw, k as isize, 1),
        );
        let gb: Vec<T> = g.chunks(p).map(|ch| ch.iter().copied().sum()).collect();
        // dcols = W^T (k x co) * g (co x p)
        let mut gcols = vec![T::zero(); k * p];
        T::gemm(
            k,
            co,
            p,
            T::one(),
            (weight.data(), 1, k as isize),
            (g, p as isize, 1),
            T::zero(),
            (&mut gcols, p as isize, 1),
        );
        let gx = if win.is_identity() {
            gcols
        } else {
            let mut gx = vec![T::zero(); c * h * w];
            col2im(&win, &gcols, &mut gx);
            gx
        };
        (gx, (gw, gb))
    });
    let (gx_parts, wb): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let (gw, gb) = reduce_in_order(&wb, co * k, co);
    Ok(ConvGrads {
        input: concat_samples([n, c, h, w], gx_parts),
        weight: Tensor::from_vec(spec.weight_shape(), gw)?,
        bias: Tensor::vector(gb),
    })
}

/// Transposed convolution (fractionally strided up-sampling).
pub fn deconv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    const OP: &str = "deconv2d";
    if !spec.transposed {
        return Err(Error::invalid(
            "deconv2d: spec is not transposed; use conv2d",
        ));
    }
    check_weight(OP, weight, spec)?;
    check_bias(OP, bias, spec)?;
    check_input(OP, input, spec)?;
    let [n, ci, h, w] = input.shape();
    let (oh, ow) = spec.output_size(h, w)?;
    let co = spec.out_channels;
    // The output plane plays the role of a convolution input.
    let win = Window {
        channels: co,
        h: oh,
        w: ow,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        oh: h,
        ow: w,
    };
    let k = spec.patch_len(co);
    let p = h * w;
    let parts = par::map_indexed(n, |i| {
        let x = input.sample(i);
        // cols (k x p) = W^T (k x ci) * x (ci x p)
        let mut cols = vec![T::zero(); k * p];
        T::gemm(
            k,
            ci,
            p,
            T::one(),
            (weight.data(), 1, k as isize),
            (x, p as isize, 1),
            T::zero(),
            (&mut cols, p as isize, 1),
        );
        let mut out = vec![T::zero(); co * oh * ow];
        col2im(&win, &cols, &mut out);
        add_bias(&mut out, bias, oh * ow);
        out
    });
    Ok(concat_samples([n, co, oh, ow], parts))
}

/// Reverse-mode pass of [`deconv2d`].
pub fn deconv2d_grad<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    const OP: &str = "deconv2d_grad";
    if !spec.transposed {
        return Err(Error::invalid(
            "deconv2d_grad: spec is not transposed; use conv2d_grad",
        ));
    }
    check_weight(OP, weight, spec)?;
    check_input(OP, input, spec)?;
    let [n, ci, h, w] = input.shape();
    let (oh, ow) = spec.output_size(h, w)?;
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, oh, ow] {
        return Err(Error::shape(
            OP,
            format!(
                "grad_out {:?} but forward output is {:?}",
                grad_out.shape(),
                [n, co, oh, ow]
            ),
        ));
    }
    let win = Window {
        channels: co,
        h: oh,
        w: ow,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        oh: h,
        ow: w,
    };
    let k = spec.patch_len(co);
    let p = h * w;
    let parts = par::map_indexed(n, |i| {
        let x = input.sample(i);
        let g = grad_out.sample(i);
        let mut gcols = vec![T::zero(); k * p];
        im2col(&win, g, &mut gcols);
        // dx (ci x p) = W (ci x k) * gcols (k x p)
        let mut gx = vec![T::zero(); ci * p];
        T::gemm(
            ci,
            k,
            p,
            T::one(),
            (weight.data(), k as isize, 1),
            (&gcols, p as isize, 1),
            T::zero(),
            (&mut gx, p as isize, 1),
        );
        // dW (ci x k) = x (ci x p) * gcols^T (p x k)
        let mut gw = vec![T::zero(); ci * k];
        T::gemm(
            ci,
            p,
            k,
            T::one(),
            (x, p as isize, 1),
            (&gcols, 1, p as isize),
            T::zero(),
            (&mut gw, k as isize, 1),
        );
        let gb: Vec<T> = g
            .chunks(oh * ow)
            .map(|ch| ch.iter().copied().sum())
            .collect();
        (gx, (gw, gb))
    });
    let (gx_parts, wb): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let (gw, gb) = reduce_in_order(&wb, ci * k, co);
    Ok(ConvGrads {
        input: concat_samples([n, ci, h, w], gx_parts),
        weight: Tensor::from_vec(spec.weight_shape(), gw)?,
        bias: Tensor::vector(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{nested_conv, random_tensor};

    #[test]
    fn all_ones_3x3_with_padding() {
        let x = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let spec = ConvSpec::conv(1, 1, 3, 1, 1).without_bias();
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn stride_two_output_size() {
        let spec = ConvSpec::conv(1, 1, 3, 2, 1);
        assert_eq!(spec.output_size(4, 4).unwrap(), (2, 2));
        // even inputs halve exactly
        for h in [2, 8, 32, 224] {
            assert_eq!(spec.output_size(h, h).unwrap(), (h / 2, h / 2));
        }
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let x = random_tensor::<f32>([2, 3, 8, 8], 1);
        let w = random_tensor::<f32>([16, 3, 3, 3], 2);
        let b = random_tensor::<f32>([1, 16, 1, 1], 3);
        let spec = ConvSpec::conv(3, 16, 3, 1, 1);
        let y = conv2d(&x, &w, Some(&b), &spec).unwrap();
        let oracle = nested_conv(&x, &w, Some(&b), 1, 1);
        assert!(y.max_abs_diff(&oracle).unwrap() < 1e-5);
    }

    #[test]
    fn strided_padded_geometries_match_oracle() {
        for (k, stride, pad, side) in [
            (3, 2, 1, 8),
            (5, 3, 2, 11),
            (4, 2, 0, 9),
            (3, 1, 2, 5),
            (1, 2, 0, 7),
        ] {
            let x = random_tensor::<f64>([1, 2, side, side], k as u64);
            let w = random_tensor::<f64>([3, 2, k, k], 7);
            let spec = ConvSpec::conv(2, 3, k, stride, pad).without_bias();
            let y = conv2d(&x, &w, None, &spec).unwrap();
            let oracle = nested_conv(&x, &w, None, stride, pad);
            assert!(
                y.max_abs_diff(&oracle).unwrap() < 1e-12,
                "k{k} s{stride} p{pad}"
            );
        }
    }

    #[test]
    fn shared_heads_equal_separate_convs() {
        let x = random_tensor::<f32>([2, 4, 8, 8], 1);
        let spec = ConvSpec::conv(4, 3, 3, 2, 1);
        let (w1, w2) = (
            random_tensor::<f32>([3, 4, 3, 3], 2),
            random_tensor::<f32>([3, 4, 3, 3], 3),
        );
        let b = random_tensor::<f32>([1, 3, 1, 1], 4);
        let out = conv2d_shared(&x, &[(&w1, Some(&b)), (&w2, Some(&b))], &spec).unwrap();
        assert_eq!(out[0], conv2d(&x, &w1, Some(&b), &spec).unwrap());
        assert_eq!(out[1], conv2d(&x, &w2, Some(&b), &spec).unwrap());
    }

    #[test]
    fn rejects_channel_mismatch_naming_dimension() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros([4, 3, 3, 3]);
        let spec = ConvSpec::conv(3, 4, 3, 1, 1).without_bias();
        let err = conv2d(&x, &w, None, &spec).unwrap_err().to_string();
        assert!(err.contains("in_channels"), "{err}");
        let w_bad = Tensor::<f32>::zeros([4, 3, 5, 3]);
        let err = conv2d(&Tensor::zeros([1, 3, 4, 4]), &w_bad, None, &spec)
            .unwrap_err()
            .to_string();
        assert!(err.contains("kernel_h"), "{err}");
    }

    #[test]
    fn rejects_non_positive_output() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros([1, 1, 5, 5]);
        let spec = ConvSpec::conv(1, 1, 5, 1, 0).without_bias();
        assert!(conv2d(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = random_tensor::<f64>([2, 2, 5, 5], 4);
        let w = random_tensor::<f64>([3, 2, 3, 3], 5);
        let spec = ConvSpec::conv(2, 3, 3, 2, 1);
        let g = Tensor::zeros([2, 3, 3, 3]);
        let gr = conv2d_grad(&g, &x, &w, &spec).unwrap();
        assert!(gr.input.data().iter().all(|&v| v == 0.0));
        assert!(gr.weight.data().iter().all(|&v| v == 0.0));
        assert!(gr.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_kernel_scales_gradient() {
        let x = random_tensor::<f32>([1, 1, 4, 4], 6);
        let w = Tensor::<f32>::full([1, 1, 1, 1], 2.5);
        let spec = ConvSpec::conv(1, 1, 1, 1, 0);
        let g = random_tensor::<f32>([1, 1, 4, 4], 7);
        let gr = conv2d_grad(&g, &x, &w, &spec).unwrap();
        for (a, b) in gr.input.data().iter().zip(g.data()) {
            assert_eq!(*a, 2.5 * b);
        }
    }

    #[test]
    fn deconv_doubles_two_by_two() {
        let x = random_tensor::<f32>([1, 1, 2, 2], 8);
        let w = random_tensor::<f32>([1, 1, 4, 4], 9);
        let spec = ConvSpec::deconv(1, 1, 4, 2, 1).without_bias();
        let y = deconv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        let z = deconv2d(&Tensor::zeros([1, 1, 2, 2]), &w, None, &spec).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_equals_conv_input_gradient() {
        // conv 3 -> 5 channels, k4 s2 p1 on 8x8 gives 4x4
        let conv = ConvSpec::conv(3, 5, 4, 2, 1).without_bias();
        let deconv = ConvSpec::deconv(5, 3, 4, 2, 1).without_bias();
        let w = random_tensor::<f32>([5, 3, 4, 4], 10);
        let y = random_tensor::<f32>([2, 5, 4, 4], 11);
        let x = random_tensor::<f32>([2, 3, 8, 8], 12);
        let via_grad = conv2d_grad(&y, &x, &w, &conv).unwrap().input;
        let via_deconv = deconv2d(&y, &w, None, &deconv).unwrap();
        assert!(via_grad.max_abs_diff(&via_deconv).unwrap() < 1e-5);
    }

    #[test]
    fn deconv_weight_grad_of_single_element() {
        // one input pixel: grad_weight[ci, co, ky, kx] = x * g[co, ky - pad, kx - pad]
        let spec = ConvSpec::deconv(1, 2, 4, 2, 1);
        let x = Tensor::<f64>::full([1, 1, 1, 1], 1.7);
        let w = random_tensor::<f64>([1, 2, 4, 4], 13);
        let (oh, ow) = spec.output_size(1, 1).unwrap();
        assert_eq!((oh, ow), (2, 2));
        let g = random_tensor::<f64>([1, 2, 2, 2], 14);
        let gr = deconv2d_grad(&g, &x, &w, &spec).unwrap();
        for co in 0..2 {
            for ky in 0..4 {
                for kx in 0..4 {
                    let (oy, ox) = (ky as isize - 1, kx as isize - 1);
                    let expect = if (0..2).contains(&oy) && (0..2).contains(&ox) {
                        1.7 * g.data()[co * 4 + oy as usize * 2 + ox as usize]
                    } else {
                        0.0
                    };
                    let got = gr.weight.data()[(co * 4 + ky) * 4 + kx];
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }
}
