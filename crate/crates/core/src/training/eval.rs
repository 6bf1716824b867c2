use crate::classifier::predict_topk;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::tensor::{Real, Tensor};

use super::{add_gaussian_noise, augment_batch, substream, Augment};

/// Which score vector to rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScoreView {
    /// `s = (s_L + s_c) / 2` (or `s_L` for single-stream models).
    #[default]
    Fused,
    /// `s_L` alone: the `I_L`-only ablation.
    LowOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub view: ScoreView,
    /// Centre-crop view applied before scoring.
    pub preprocess: Option<Augment>,
    pub batch_size: usize,
    /// `(variance, seed)` of Gaussian noise added to the raw images.
    pub noise: Option<(f64, u64)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            view: ScoreView::Fused,
            preprocess: None,
            batch_size: 100,
            noise: None,
        }
    }
}

/// Top-1 and top-5 error rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.top1
    }
}

/// Number of rows whose label is not among the `k` best scores.
pub fn topk_misses<T: Real>(scores: &Tensor<T>, labels: &[usize], k: usize) -> Result<usize> {
    if scores.batch() != labels.len() {
        return Err(Error::shape(
            "topk",
            format!("{} score rows but {} labels", scores.batch(), labels.len()),
        ));
    }
    let ranked = predict_topk(scores, k)?;
    Ok(ranked
        .iter()
        .zip(labels)
        .filter(|(r, l)| !r.contains(l))
        .count())
}

/// Fraction of samples whose label is missing from the top `k` scores.
pub fn evaluate_topk<T: Real>(p: &Pipeline<T>, data: &LabeledDataset, k: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate_topk: empty dataset"));
    }
    let ks = [k, k];
    Ok(evaluate_ks(p, data, &EvalOptions::default(), ks)?.0)
}

fn evaluate_ks<T: Real>(
    p: &Pipeline<T>,
    data: &LabeledDataset,
    opts: &EvalOptions,
    ks: [usize; 2],
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate: empty dataset"));
    }
    let n = data.len();
    let bs = opts.batch_size.max(1);
    let mut misses = [0usize; 2];
    for start in (0..n).step_by(bs) {
        let idx: Vec<usize> = (start..(start + bs).min(n)).collect();
        let mut images: Tensor<T> = data.images.gather(&idx).cast();
        if let Some((variance, seed)) = opts.noise {
            for (pos, &i) in idx.iter().enumerate() {
                let [_, c, h, w] = images.shape();
                let one = Tensor::from_vec([1, c, h, w], images.sample(pos).to_vec())?;
                let noisy = add_gaussian_noise(&one, variance, &mut substream(seed, i as u64))?;
                images.sample_mut(pos).copy_from_slice(noisy.data());
            }
        }
        if let Some(aug) = opts.preprocess {
            images = augment_batch(&images, &idx, aug, false, 0, 0)?;
        }
        let scores = p.scores(&images)?;
        let s = match opts.view {
            ScoreView::Fused => scores.s,
            ScoreView::LowOnly => scores.s_l,
        };
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        for (m, &k) in misses.iter_mut().zip(&ks) {
            *m += topk_misses(&s, &labels, k)?;
        }
    }
    Ok((misses[0] as f64 / n as f64, misses[1] as f64 / n as f64))
}

/// Top-1 and top-5 (or top-C when C < 5) error under `opts`.
pub fn evaluate<T: Real>(
    p: &Pipeline<T>,
    data: &LabeledDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let k5 = 5.min(p.classifier.classes());
    let (top1, top5) = evaluate_ks(p, data, opts, [1, k5])?;
    Ok(EvalReport {
        top1,
        top5,
        samples: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, Split};
    use crate::pipeline::PipelineKind;
    use crate::training::seeded_rng;

    #[test]
    fn perfect_scores_have_zero_error() {
        let labels = [2, 0, 1];
        let mut s = Tensor::<f32>::zeros([3, 3, 1, 1]);
        for (r, &l) in labels.iter().enumerate() {
            s.data_mut()[r * 3 + l] = 1.0;
        }
        assert_eq!(topk_misses(&s, &labels, 1).unwrap(), 0);
    }

    #[test]
    fn k_equal_classes_never_misses() {
        let s = crate::testing::random_tensor::<f32>([20, 10, 1, 1], 3);
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        assert_eq!(topk_misses(&s, &labels, 10).unwrap(), 0);
    }

    #[test]
    fn constant_scores_on_balanced_data() {
        let s = Tensor::<f32>::zeros([100, 10, 1, 1]);
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let err = topk_misses(&s, &labels, 1).unwrap() as f64 / 100.0;
        assert!((err - 0.9).abs() < 1e-12);
    }

    #[test]
    fn pipeline_evaluation_is_deterministic_and_rejects_empty() {
        let data = synthetic_dataset(12, 4, 3, 16, 1, Split::Test).unwrap();
        let p = Pipeline::<f32>::new(PipelineKind::Lowres, 3, 4, &mut seeded_rng(1));
        let a = evaluate_topk(&p, &data, 1).unwrap();
        assert_eq!(a, evaluate_topk(&p, &data, 1).unwrap());
        assert_eq!(evaluate_topk(&p, &data, 4).unwrap(), 0.0);
        assert!(evaluate_topk(&p, &data.subset(&[]), 1).is_err());
    }
}
