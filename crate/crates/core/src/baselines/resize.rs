use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Source coordinate and blend weight for each destination index, using
/// half-pixel centres clamped to the source range.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resampling of every plane to `out_h x out_w`.
pub fn downsample_bilinear<T: Real>(
    image: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = image.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "downsample_bilinear: target dims must be >= 1",
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("downsample_bilinear: empty source image"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in image.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let at = |y: usize, x: usize| plane[y * w + x].as_f64();
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(T::from_f64_lossy(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::from_vec([n, c, out_h, out_w], out)
}
