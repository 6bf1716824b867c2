//! Finite-difference verification of every hand-written backward pass.
//!
//! Each kernel is wrapped in a scalar objective `f = sum(R * op(x))` with a
//! random projection `R`, so the analytic gradient is the kernel's backward
//! pass fed `R` as upstream gradient. Probes are drawn where the analytic
//! gradient is at least a tenth of the tensor's largest entry; elsewhere a
//! relative error only measures round-off.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::layers::Params;
use crate::ops::{self, ConvSpec};
use crate::pipeline::{Pipeline, PipelineKind};
use crate::tensor::{Real, Tensor};
use crate::training::{
    seeded_rng, stage_objective, step_gradients, substream, Preset, TrainConfig,
};

/// Probes per checked tensor.
const PROBES: usize = 6;

/// Step size and pass threshold for one precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub epsilon: f64,
    pub max_rel: f64,
}

impl Tolerance {
    /// Per-kernel settings: 1e-3 relative at 32 bits, 1e-6 at 64 bits.
    pub fn for_type<T: Real>() -> Self {
        if std::mem::size_of::<T>() <= 4 {
            Self {
                epsilon: 1e-3,
                max_rel: 1e-3,
            }
        } else {
            Self {
                epsilon: 1e-6,
                max_rel: 1e-6,
            }
        }
    }

    /// Whole-model settings (64-bit only).
    pub const MODEL: Self = Self {
        epsilon: 1e-7,
        max_rel: 1e-4,
    };
}

/// Worst relative error over the probes of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub precision: &'static str,
    pub seed: u64,
    pub worst: f64,
    pub probes: usize,
    /// Probes set aside because the loss has a kink within one step of them.
    pub kinks: usize,
    pub tolerance: f64,
}

impl GradReport {
    /// Every scored probe within tolerance, and kinks at most a quarter of
    /// all probes drawn.
    pub fn passed(&self) -> bool {
        self.probes > 0 && self.worst < self.tolerance && 4 * self.kinks <= self.probes + self.kinks
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {:>3} seed {:>2}  worst {:.2e} (< {:.0e})  probes {:>3}  kinks {}  {}",
            self.name,
            self.precision,
            self.seed,
            self.worst,
            self.tolerance,
            self.probes,
            self.kinks,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

fn precision<T: Real>() -> &'static str {
    if std::mem::size_of::<T>() <= 4 {
        "f32"
    } else {
        "f64"
    }
}

fn uniform<T: Real, R: Rng>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

/// Uniform magnitudes in `[0.1, 1)` with random sign: clear of the ReLU kink.
fn off_kink<T: Real, R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let mut t = uniform::<T, R>(shape, 0.1, 1.0, rng);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct values at least 0.01 apart, so no pooling window has a near tie.
fn distinct<T: Real, R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let data = order
        .into_iter()
        .map(|k| T::from_f64_lossy(0.01 * k as f64 - 0.005 * n as f64))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

fn project<T: Real>(r: &Tensor<T>, out: &Tensor<T>) -> f64 {
    r.data()
        .iter()
        .zip(out.data())
        .map(|(a, b)| a.as_f64() * b.as_f64())
        .sum()
}

/// Coordinates whose analytic gradient is at least a tenth of the largest.
fn pick_probes<R: Rng>(grad: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let mut strong: Vec<usize> = (0..grad.len())
        .filter(|&i| grad[i].abs() >= 0.1 * max)
        .collect();
    strong.shuffle(rng);
    strong.truncate(count);
    strong.sort_unstable();
    strong
}

/// Central difference of `f` at coordinate `i` of `x`, divided by the step
/// actually taken after rounding to `T`.
fn central<T: Real>(f: &mut impl FnMut(&[T]) -> f64, x: &mut [T], i: usize, eps: f64) -> f64 {
    let orig = x[i];
    let e = T::from_f64_lossy(eps);
    x[i] = orig + e;
    let up = f(x);
    x[i] = orig - e;
    let down = f(x);
    x[i] = orig;
    (up - down) / ((orig + e).as_f64() - (orig - e).as_f64())
}

/// Worst relative error at sampled coordinates, plus the probe count.
pub fn grad_check_at<T: Real>(
    mut f: impl FnMut(&[T]) -> f64,
    x: &[T],
    analytic: &[T],
    indices: &[usize],
    epsilon: f64,
) -> (f64, usize) {
    let mut probe = x.to_vec();
    let worst = indices
        .iter()
        .map(|&i| {
            ops::relative_error(
                analytic[i].as_f64(),
                central(&mut f, &mut probe, i, epsilon),
            )
        })
        .fold(0.0, f64::max);
    (worst, indices.len())
}

/// Folds checks of several tensors into one report.
struct Acc<'a> {
    worst: f64,
    probes: usize,
    tol: Tolerance,
    rng: &'a mut rand_chacha::ChaCha8Rng,
}

impl Acc<'_> {
    fn check<T: Real>(&mut self, f: impl FnMut(&[T]) -> f64, x: &Tensor<T>, analytic: &Tensor<T>) {
        let g: Vec<f64> = analytic.data().iter().map(|v| v.as_f64()).collect();
        let idx = pick_probes(&g, PROBES, self.rng);
        let (w, n) = grad_check_at(f, x.data(), analytic.data(), &idx, self.tol.epsilon);
        self.worst = self.worst.max(w);
        self.probes += n;
    }
}

fn with_data<T: Real>(shape: [usize; 4], v: &[T]) -> Tensor<T> {
    Tensor::from_vec(shape, v.to_vec()).expect("shape matches length")
}

type Check = fn(&mut Acc<'_>) -> Result<()>;

fn check_conv<T: Real>(acc: &mut Acc<'_>, spec: ConvSpec, side: usize) -> Result<()> {
    let x = uniform::<T, _>([2, spec.in_channels, side, side], -1.0, 1.0, acc.rng);
    let w = uniform::<T, _>(spec.weight_shape(), -0.5, 0.5, acc.rng);
    let b = uniform::<T, _>([spec.out_channels, 1, 1, 1], -0.5, 0.5, acc.rng);
    let run = |x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>| {
        if spec.transposed {
            ops::deconv2d(x, w, Some(b), &spec)
        } else {
            ops::conv2d(x, w, Some(b), &spec)
        }
    };
    let out = run(&x, &w, &b)?;
    let r = uniform::<T, _>(out.shape(), -1.0, 1.0, acc.rng);
    let g = if spec.transposed {
        ops::deconv2d_grad(&r, &x, &w, &spec)?
    } else {
        ops::conv2d_grad(&r, &x, &w, &spec)?
    };
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    acc.check(
        |v| project(&r, &run(&with_data(xs, v), &w, &b).unwrap()),
        &x,
        &g.input,
    );
    acc.check(
        |v| project(&r, &run(&x, &with_data(ws, v), &b).unwrap()),
        &w,
        &g.weight,
    );
    acc.check(
        |v| project(&r, &run(&x, &w, &with_data(bs, v)).unwrap()),
        &b,
        &g.bias,
    );
    Ok(())
}

fn conv_s1<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    check_conv::<T>(acc, ConvSpec::conv(3, 4, 3, 1, 1), 6)
}

fn conv_s2<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    check_conv::<T>(acc, ConvSpec::conv(3, 4, 3, 2, 1), 8)
}

fn deconv<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    check_conv::<T>(acc, ConvSpec::deconv(4, 3, 4, 2, 1), 4)
}

fn linear<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    let x = uniform::<T, _>([3, 7, 1, 1], -1.0, 1.0, acc.rng);
    let w = uniform::<T, _>([5, 7, 1, 1], -0.5, 0.5, acc.rng);
    let b = uniform::<T, _>([5, 1, 1, 1], -0.5, 0.5, acc.rng);
    let r = uniform::<T, _>([3, 5, 1, 1], -1.0, 1.0, acc.rng);
    let g = ops::linear_grad(&r, &x, &w)?;
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    acc.check(
        |v| project(&r, &ops::linear(&with_data(xs, v), &w, &b).unwrap()),
        &x,
        &g.input,
    );
    acc.check(
        |v| project(&r, &ops::linear(&x, &with_data(ws, v), &b).unwrap()),
        &w,
        &g.weight,
    );
    acc.check(
        |v| project(&r, &ops::linear(&x, &w, &with_data(bs, v)).unwrap()),
        &b,
        &g.bias,
    );
    Ok(())
}

fn relu<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    let x = off_kink::<T, _>([2, 3, 5, 5], acc.rng);
    let r = uniform::<T, _>(x.shape(), -1.0, 1.0, acc.rng);
    let g = ops::relu_grad(&r, &x)?;
    let s = x.shape();
    acc.check(|v| project(&r, &ops::relu(&with_data(s, v))), &x, &g);
    Ok(())
}

fn maxpool<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    let x = distinct::<T, _>([2, 3, 8, 8], acc.rng);
    let pooled = ops::maxpool2d(&x, 2, 2)?;
    let r = uniform::<T, _>(pooled.output.shape(), -1.0, 1.0, acc.rng);
    let g = ops::maxpool2d_grad(&r, &pooled)?;
    let s = x.shape();
    acc.check(
        |v| project(&r, &ops::maxpool2d(&with_data(s, v), 2, 2).unwrap().output),
        &x,
        &g,
    );
    Ok(())
}

fn avgpool<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    let x = uniform::<T, _>([2, 4, 5, 5], -1.0, 1.0, acc.rng);
    let r = uniform::<T, _>([2, 4, 1, 1], -1.0, 1.0, acc.rng);
    let g = ops::global_avg_pool_grad(&r, x.shape())?;
    let s = x.shape();
    acc.check(
        |v| project(&r, &ops::global_avg_pool(&with_data(s, v))),
        &x,
        &g,
    );
    Ok(())
}

fn cross_entropy<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    let x = uniform::<T, _>([4, 6, 1, 1], -2.0, 2.0, acc.rng);
    let labels: Vec<usize> = (0..4).map(|_| acc.rng.random_range(0..6)).collect();
    let (_, g) = ops::softmax_cross_entropy(&x, &labels)?;
    let s = x.shape();
    acc.check(
        |v| {
            ops::softmax_cross_entropy(&with_data(s, v), &labels)
                .unwrap()
                .0
        },
        &x,
        &g,
    );
    Ok(())
}

fn kernel_checks<T: Real>() -> [(&'static str, Check); 9] {
    [
        ("conv2d 3x3/1", conv_s1::<T>),
        ("conv2d 3x3/2", conv_s2::<T>),
        ("deconv2d 4x4/2", deconv::<T>),
        ("linear", linear::<T>),
        ("relu", relu::<T>),
        ("maxpool 2x2/2", maxpool::<T>),
        ("global_avg_pool", avgpool::<T>),
        ("softmax_cross_entropy", cross_entropy::<T>),
        ("two-head shared conv", shared::<T>),
    ]
}

/// The shared-patch forward used by the encoder branches must agree with
/// the per-head backward pass.
fn shared<T: Real>(acc: &mut Acc<'_>) -> Result<()> {
    let spec = ConvSpec::conv(4, 2, 3, 2, 1);
    let x = uniform::<T, _>([2, 4, 6, 6], -1.0, 1.0, acc.rng);
    let w1 = uniform::<T, _>(spec.weight_shape(), -0.5, 0.5, acc.rng);
    let w2 = uniform::<T, _>(spec.weight_shape(), -0.5, 0.5, acc.rng);
    let b1 = uniform::<T, _>([2, 1, 1, 1], -0.5, 0.5, acc.rng);
    let b2 = uniform::<T, _>([2, 1, 1, 1], -0.5, 0.5, acc.rng);
    let run = |x: &Tensor<T>| ops::conv2d_shared(x, &[(&w1, Some(&b1)), (&w2, Some(&b2))], &spec);
    let outs = run(&x)?;
    let r1 = uniform::<T, _>(outs[0].shape(), -1.0, 1.0, acc.rng);
    let r2 = uniform::<T, _>(outs[1].shape(), -1.0, 1.0, acc.rng);
    let mut gx = ops::conv2d_grad(&r1, &x, &w1, &spec)?.input;
    gx.add_assign(&ops::conv2d_grad(&r2, &x, &w2, &spec)?.input)?;
    let s = x.shape();
    acc.check(
        |v| {
            let o = run(&with_data(s, v)).unwrap();
            project(&r1, &o[0]) + project(&r2, &o[1])
        },
        &x,
        &gx,
    );
    Ok(())
}

/// Every kernel check at precision `T` for one seed.
pub fn kernel_reports<T: Real>(seed: u64) -> Result<Vec<GradReport>> {
    let tol = Tolerance::for_type::<T>();
    let mut out = Vec::new();
    for (k, (name, check)) in kernel_checks::<T>().into_iter().enumerate() {
        let mut rng = substream(seed, k as u64);
        let mut acc = Acc {
            worst: 0.0,
            probes: 0,
            tol,
            rng: &mut rng,
        };
        check(&mut acc)?;
        out.push(GradReport {
            name: name.to_string(),
            precision: precision::<T>(),
            seed,
            worst: acc.worst,
            probes: acc.probes,
            kinks: 0,
            tolerance: tol.max_rel,
        });
    }
    Ok(out)
}

/// Mutable view of one parameter scalar by flat index over `named()` order.
fn nudge<P: Params<f64>>(params: &mut P, mut index: usize, value: Option<f64>) -> f64 {
    for t in params.tensors_mut() {
        if index < t.len() {
            let old = t.data()[index];
            if let Some(v) = value {
                t.data_mut()[index] = v;
            }
            return old;
        }
        index -= t.len();
    }
    panic!("parameter index out of range");
}

/// Probes per parameter tensor of a whole-model check.
const MODEL_PROBES: usize = 2;

fn model_check(
    name: &str,
    p: &Pipeline<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GradReport> {
    let step = step_gradients(p, x, labels, cfg)?;
    let tol = Tolerance::MODEL;
    let mut rng = substream(seed, 0x6d6f_6465_6c00 + cfg.stage as u64);
    let mut work = p.clone();
    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut kinks = 0;

    // (auto-encoder or classifier, gradient tensors in parameter order)
    let mut parts: Vec<(bool, Vec<&Tensor<f64>>)> = Vec::new();
    if let Some(g) = &step.wae_grads {
        parts.push((true, g.named().into_iter().map(|(_, t)| t).collect()));
    }
    if let Some(g) = &step.cls_grads {
        parts.push((false, g.named().into_iter().map(|(_, t)| t).collect()));
    }
    for (is_wae, grads) in parts {
        let mut offset = 0;
        for g in grads {
            let gv: Vec<f64> = g.data().to_vec();
            for i in pick_probes(&gv, MODEL_PROBES, &mut rng) {
                let flat = offset + i;
                let eval = |v: f64, work: &mut Pipeline<f64>| -> Result<f64> {
                    if is_wae {
                        nudge(work.wae.as_mut().expect("wae"), flat, Some(v));
                    } else {
                        nudge(&mut work.classifier, flat, Some(v));
                    }
                    stage_objective(work, x, labels, cfg)
                };
                let orig = if is_wae {
                    nudge(work.wae.as_mut().expect("wae"), flat, None)
                } else {
                    nudge(&mut work.classifier, flat, None)
                };
                let up = eval(orig + tol.epsilon, &mut work)?;
                let down = eval(orig - tol.epsilon, &mut work)?;
                let mid = eval(orig, &mut work)?;
                // One-sided slopes that disagree mean a ReLU or max switches
                // inside the step; the derivative is undefined there.
                let (fwd, bwd) = ((up - mid) / tol.epsilon, (mid - down) / tol.epsilon);
                if ops::relative_error(fwd, bwd) > 10.0 * tol.max_rel {
                    kinks += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * tol.epsilon);
                worst = worst.max(ops::relative_error(gv[i], numeric));
                probes += 1;
            }
            offset += g.len();
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        precision: "f64",
        seed,
        worst,
        probes,
        kinks,
        tolerance: tol.max_rel,
    })
}

/// Whole-model checks at 64 bits: stage 1 (`L_t` w.r.t. the auto-encoder),
/// stage 2 (`L_c` w.r.t. the classifier, front frozen), stage 2 of the
/// learned-decomposition baseline (gradients reach the encoder) and stage 3.
pub fn model_reports(seed: u64) -> Result<Vec<GradReport>> {
    // Noise images: flat regions would put exact ties into the pooling
    // windows, where the loss has no derivative.
    let mut rng = substream(seed, 0x696d_6167_6500);
    let x = uniform::<f64, _>([2, 3, 16, 16], 0.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..4)).collect();
    let cfg = |stage: u8| -> Result<TrainConfig> {
        let mut c = TrainConfig::preset(Preset::Desk, stage)?;
        c.classes = 4;
        Ok(c)
    };
    // At the training gamma the auto-encoder gradients sit near 1e-6, where
    // central differences of an O(1) loss only resolve round-off; a unit
    // weight exercises the same combination at a checkable scale.
    let mut stage3 = cfg(3)?;
    stage3.gamma = 1.0;
    let mut rng = seeded_rng(seed);
    let wae = Pipeline::<f64>::new(PipelineKind::Wae, 3, 4, &mut rng);
    let decomposition = Pipeline::<f64>::new(PipelineKind::Decomposition, 3, 4, &mut rng);
    Ok(vec![
        model_check("model stage 1", &wae, &x, &labels, &cfg(1)?, seed)?,
        model_check("model stage 2", &wae, &x, &labels, &cfg(2)?, seed)?,
        model_check(
            "model stage 2 decomposition",
            &decomposition,
            &x,
            &labels,
            &cfg(2)?,
            seed,
        )?,
        model_check("model stage 3", &wae, &x, &labels, &stage3, seed)?,
    ])
}

/// Kernel checks at both precisions over `seeds` seeds, then whole-model
/// checks on seed 0.
pub fn gradient_suite(seeds: u64) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for seed in 0..seeds {
        out.extend(kernel_reports::<f32>(seed)?);
        out.extend(kernel_reports::<f64>(seed)?);
    }
    out.extend(model_reports(0)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_skip_weak_coordinates() {
        let g = [1.0, 0.01, -0.5, 0.0, 0.2];
        let idx = pick_probes(&g, 10, &mut seeded_rng(0));
        assert_eq!(idx, vec![0, 2, 4]);
        assert!(pick_probes(&[0.0; 4], 3, &mut seeded_rng(0)).is_empty());
    }

    #[test]
    fn sampled_check_catches_wrong_gradient() {
        let x = [0.5f64, -1.0, 2.0];
        let f = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let (good, n) = grad_check_at(f, &x, &[1.0, -2.0, 4.0], &[0, 1, 2], 1e-6);
        assert_eq!(n, 3);
        assert!(good < 1e-8, "{good}");
        let (bad, _) = grad_check_at(f, &x, &[1.0, -2.0, 4.4], &[2], 1e-6);
        assert!(bad > 0.05);
    }

    #[test]
    fn one_seed_of_kernels_passes_both_precisions() {
        for r in kernel_reports::<f32>(7)
            .unwrap()
            .into_iter()
            .chain(kernel_reports::<f64>(7).unwrap())
        {
            assert!(r.passed(), "{r}");
        }
    }
}
