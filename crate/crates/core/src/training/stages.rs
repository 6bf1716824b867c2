//! The three-stage schedule.
//!
//! Stage 1 fits the auto-encoder to the transform loss alone. Stage 2 fits
//! the classifier to the classification loss with the front end frozen
//! (for the learned-decomposition baseline the encoder is trained too, with
//! the transform loss disabled). Stage 3 fine-tunes everything on
//! `L_c + gamma * L_t`.

use rand::seq::SliceRandom;

use crate::classifier::classification_loss;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, PipelineKind};
use crate::tensor::{Real, Tensor};
use crate::wae::TransformLossConfig;

use super::config::{LrSchedule, TrainConfig};
use super::eval::{evaluate, EvalOptions};
use super::metrics::EpochMetrics;
use super::{augment_batch, substream, Augment, SgdState};

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4500;

/// Plateau detector: counts epochs without a `min_delta` improvement.
#[derive(Clone, Debug)]
struct Plateau {
    best: f64,
    stale: usize,
    decays: usize,
}

impl Plateau {
    fn new() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            decays: 0,
        }
    }

    /// Feeds an error in percentage points; returns whether to decay now.
    fn observe(&mut self, error_pp: f64, cfg: &TrainConfig) -> bool {
        if error_pp < self.best - cfg.plateau_min_delta {
            self.best = error_pp;
            self.stale = 0;
            return false;
        }
        self.best = self.best.min(error_pp);
        self.stale += 1;
        if self.stale >= cfg.plateau_patience && self.decays < cfg.plateau_max_decays {
            self.decays += 1;
            self.stale = 0;
            return true;
        }
        false
    }
}

fn check_prerequisites<T: Real>(
    p: &Pipeline<T>,
    cfg: &TrainConfig,
    data: &LabeledDataset,
) -> Result<()> {
    let stage = cfg.stage;
    match (stage, p.kind) {
        (1, PipelineKind::Wae) => {}
        (1, kind) => {
            return Err(Error::Config(format!(
                "stage 1 trains the auto-encoder on the transform loss; `{kind}` has no such stage"
            )))
        }
        (2, PipelineKind::Wae) if p.completed_stage < 1 => {
            return Err(Error::MissingPrerequisite {
                stage,
                msg: "stage 2 needs a stage-1 auto-encoder checkpoint (run train-wae first)".into(),
            })
        }
        (2, _) => {}
        (3, PipelineKind::Wae) if p.completed_stage < 2 => {
            return Err(Error::MissingPrerequisite {
                stage,
                msg: "stage 3 needs a stage-2 checkpoint with a trained classifier (run train-cls first)".into(),
            })
        }
        (3, PipelineKind::Wae) => {}
        (3, kind) => {
            return Err(Error::Config(format!(
                "stage 3 fine-tunes on the joint loss; `{kind}` has no transform loss"
            )))
        }
        (s, _) => return Err(Error::Config(format!("stage must be 1, 2 or 3, got {s}"))),
    }
    let [c, _, _] = data.image_shape();
    if c != p.image_channels() {
        return Err(Error::shape(
            "run_stage",
            format!(
                "dataset has {c} channels, model expects {}",
                p.image_channels()
            ),
        ));
    }
    if stage > 1 && data.classes != p.classifier.classes() {
        return Err(Error::shape(
            "run_stage",
            format!(
                "dataset has {} classes, model has {}",
                data.classes,
                p.classifier.classes()
            ),
        ));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    Ok(())
}

#[derive(Default)]
struct EpochSums {
    samples: usize,
    l_r: f64,
    l_e: f64,
    l_t: f64,
    l_c: f64,
}

/// View options used for evaluation during and after training.
pub fn eval_options(cfg: &TrainConfig) -> EvalOptions {
    EvalOptions {
        preprocess: cfg.augment.then_some(Augment {
            base: cfg.augment_base,
            crop: cfg.crop,
        }),
        ..EvalOptions::default()
    }
}

/// Runs `cfg.epochs` epochs of stage `cfg.stage`, calling `on_epoch` after
/// each one, and returns the per-epoch records.
///
/// Evaluation (top-1/top-5 on `eval`) happens after every stage-2/3 epoch;
/// the plateau schedule needs it.
pub fn run_stage<T: Real>(
    p: &mut Pipeline<T>,
    train: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics, &Pipeline<T>) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_prerequisites(p, cfg, train)?;
    if cfg.lr_schedule == LrSchedule::Plateau && eval.is_none() {
        return Err(Error::Config(
            "the plateau schedule needs an evaluation set".into(),
        ));
    }
    let stage = cfg.stage;
    let trains_wae = stage == 1 || stage == 3 || p.kind == PipelineKind::Decomposition;
    let trains_cls = stage >= 2;
    let mut wae_opt = match (&p.wae, trains_wae) {
        (Some(w), true) => Some(SgdState::new::<T>(w)),
        _ => None,
    };
    let mut cls_opt = trains_cls.then(|| SgdState::new::<T>(&p.classifier));
    let aug = Augment {
        base: cfg.augment_base,
        crop: cfg.crop,
    };
    let n = train.len();
    let mut plateau = Plateau::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let decays = match cfg.lr_schedule {
            LrSchedule::Fixed => cfg.fixed_decays_at(epoch),
            LrSchedule::Plateau => plateau.decays,
        };
        let lr = cfg.lr_after(decays);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(cfg.seed ^ SHUFFLE_SALT, epoch as u64));
        let mut sums = EpochSums::default();

        for idx in order.chunks(cfg.batch_size) {
            let raw: Tensor<T> = train.images.gather(idx).cast();
            let x = if cfg.augment {
                augment_batch(&raw, idx, aug, true, cfg.seed, epoch)?
            } else {
                raw
            };
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let step = step_gradients(p, &x, &labels, cfg)?;
            let loss = step.l_t.unwrap_or(0.0) + step.l_c.unwrap_or(0.0);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    stage,
                    epoch: epoch + 1,
                });
            }
            if let (Some(opt), Some(g), Some(w)) = (&mut wae_opt, &step.wae_grads, &mut p.wae) {
                opt.step::<T>(w, g, lr, cfg.momentum, cfg.weight_decay)?;
            }
            if let (Some(opt), Some(g)) = (&mut cls_opt, &step.cls_grads) {
                opt.step::<T>(&mut p.classifier, g, lr, cfg.momentum, cfg.weight_decay)?;
            }
            let b = idx.len() as f64;
            sums.samples += idx.len();
            if let (Some(lr_), Some(le), Some(lt)) = (step.l_r, step.l_e, step.l_t) {
                sums.l_r += lr_ * b;
                sums.l_e += le * b;
                sums.l_t += lt * b;
            }
            if let Some(lc) = step.l_c {
                sums.l_c += lc * b;
            }
        }

        let mean = |s: f64| s / sums.samples as f64;
        let has_lt = stage == 1 || stage == 3;
        let report = match (eval, trains_cls) {
            (Some(e), true) => Some(evaluate(p, e, &eval_options(cfg))?),
            _ => None,
        };
        let rec = EpochMetrics {
            epoch: epoch + 1,
            stage,
            lr,
            l_r: has_lt.then(|| mean(sums.l_r)),
            l_e: has_lt.then(|| mean(sums.l_e)),
            l_t: has_lt.then(|| mean(sums.l_t)),
            l_c: trains_cls.then(|| mean(sums.l_c)),
            top1: report.map(|r| r.top1),
            top5: report.map(|r| r.top5),
        };
        if let (LrSchedule::Plateau, Some(r)) = (cfg.lr_schedule, report) {
            plateau.observe(r.top1 * 100.0, cfg);
        }
        p.completed_stage = p.completed_stage.max(stage);
        on_epoch(&rec, p)?;
        log.push(rec);
    }
    Ok(log)
}

/// Losses and parameter gradients of one mini-batch. Gradients are `None`
/// for the parts a stage keeps frozen.
#[derive(Clone, Debug)]
pub struct StepOutput<T: Real> {
    pub l_r: Option<f64>,
    pub l_e: Option<f64>,
    pub l_t: Option<f64>,
    pub l_c: Option<f64>,
    pub wae_grads: Option<crate::wae::WaeParams<T>>,
    pub cls_grads: Option<crate::classifier::ClassifierParams<T>>,
}

impl<T: Real> StepOutput<T> {
    /// The minimised quantity: `L_t` (stage 1), `L_c` (stage 2) or
    /// `L_c + gamma * L_t` (stage 3).
    pub fn objective(&self, stage: u8, gamma: f64) -> f64 {
        match stage {
            1 => self.l_t.unwrap_or(0.0),
            2 => self.l_c.unwrap_or(0.0),
            _ => self.l_c.unwrap_or(0.0) + gamma * self.l_t.unwrap_or(0.0),
        }
    }
}

/// Forward-only value of the stage objective on one mini-batch.
pub fn stage_objective<T: Real>(
    p: &Pipeline<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let transform = |wae: &crate::wae::WaeParams<T>| -> Result<f64> {
        let (low, high) = crate::wae::encode(x, wae)?;
        let d = crate::wae::decode(&low, &high, wae)?;
        Ok(crate::wae::transform_loss_with(x, &d.image, &high, cfg.lambda, cfg.energy_norm)?.l_t)
    };
    let classify = || -> Result<f64> {
        let s = p.scores(x)?;
        Ok(classification_loss(&s.s_l, s.s_c.as_ref(), labels)?.0)
    };
    match cfg.stage {
        1 => transform(p.wae()?),
        2 => classify(),
        _ => Ok(classify()? + cfg.gamma * transform(p.wae()?)?),
    }
}

/// Losses and gradients for one mini-batch under `cfg.stage`.
pub fn step_gradients<T: Real>(
    p: &Pipeline<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<StepOutput<T>> {
    let mut out = StepOutput {
        l_r: None,
        l_e: None,
        l_t: None,
        l_c: None,
        wae_grads: None,
        cls_grads: None,
    };
    let loss_cfg = |weight: f64| TransformLossConfig {
        weight,
        lambda: cfg.lambda,
        norm: cfg.energy_norm,
    };
    match (cfg.stage, p.kind) {
        (1, _) => {
            let wae = p.wae()?;
            let trace = wae.trace(x, true)?;
            let parts = trace.transform_loss(x, cfg.lambda, cfg.energy_norm)?;
            out.wae_grads = Some(wae.backward(&trace, x, &loss_cfg(1.0), None, None)?);
            (out.l_r, out.l_e, out.l_t) = (Some(parts.l_r), Some(parts.l_e), Some(parts.l_t));
        }
        (2, PipelineKind::Decomposition) => {
            let wae = p.wae()?;
            let trace = wae.trace(x, false)?;
            let ct = p.classifier.trace(&trace.low, Some(&trace.high))?;
            let (lc, gl, gc) = classification_loss(&ct.s_l, ct.s_c(), labels)?;
            let (cg, g_low, g_high) = p.classifier.backward(&ct, &gl, gc.as_ref())?;
            out.wae_grads =
                Some(wae.backward(&trace, x, &loss_cfg(0.0), Some(&g_low), g_high.as_ref())?);
            out.cls_grads = Some(cg);
            out.l_c = Some(lc);
        }
        (2, _) => {
            let front = p.front(x)?;
            let ct = p.classify_front(&front)?;
            let (lc, gl, gc) = classification_loss(&ct.s_l, ct.s_c(), labels)?;
            out.cls_grads = Some(p.classifier.backward(&ct, &gl, gc.as_ref())?.0);
            out.l_c = Some(lc);
        }
        _ => {
            let wae = p.wae()?;
            let trace = wae.trace(x, true)?;
            let parts = trace.transform_loss(x, cfg.lambda, cfg.energy_norm)?;
            let ct = p.classifier.trace(&trace.low, Some(&trace.high))?;
            let (lc, gl, gc) = classification_loss(&ct.s_l, ct.s_c(), labels)?;
            let (cg, g_low, g_high) = p.classifier.backward(&ct, &gl, gc.as_ref())?;
            out.wae_grads = Some(wae.backward(
                &trace,
                x,
                &loss_cfg(cfg.gamma),
                Some(&g_low),
                g_high.as_ref(),
            )?);
            out.cls_grads = Some(cg);
            (out.l_r, out.l_e, out.l_t) = (Some(parts.l_r), Some(parts.l_e), Some(parts.l_t));
            out.l_c = Some(lc);
        }
    }
    Ok(out)
}
