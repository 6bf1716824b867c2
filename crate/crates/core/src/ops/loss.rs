use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax with max subtraction, computed in f64.
pub fn softmax_rows<T: Real>(scores: &Tensor<T>) -> Vec<Vec<f64>> {
    let classes = scores.channels() * scores.height() * scores.width();
    scores
        .data()
        .chunks(classes)
        .map(|row| {
            let max = row
                .iter()
                .map(|v| v.as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Mean cross-entropy of softmax(scores) against integer labels.
///
/// The loss is accumulated and returned in f64 regardless of `T`; the
/// gradient `(p - onehot) / N` is returned in `T`.
pub fn softmax_cross_entropy<T: Real>(
    scores: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let [n, classes, h, w] = scores.shape();
    if h * w != 1 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            "scores must be a (N, C) matrix",
        ));
    }
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} score rows", labels.len()),
        ));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::invalid(format!(
            "softmax_cross_entropy: label {y} at row {i} out of range for {classes} classes"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * classes);
    for (row, &y) in scores.data().chunks(classes).zip(labels) {
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = row.iter().map(|v| v.as_f64() - max).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        loss -= (shifted[y] - log_z) * inv_n;
        for (c, s) in shifted.iter().enumerate() {
            let p = (s - log_z).exp();
            let t = if c == y { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p - t) * inv_n));
        }
    }
    Ok((loss, Tensor::matrix(n, classes, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_ln2() {
        let s = Tensor::<f32>::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let (loss, g) = softmax_cross_entropy(&s, &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.data(), &[0.5, -0.5]);
        let p = softmax_rows(&s);
        assert_eq!(p[0], vec![0.5, 0.5]);
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let s = Tensor::<f32>::matrix(1, 2, vec![1000.0, 0.0]).unwrap();
        let (loss, g) = softmax_cross_entropy(&s, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(g.all_finite());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let s = Tensor::<f32>::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(softmax_cross_entropy(&s, &[3]).is_err());
    }
}
