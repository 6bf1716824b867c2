//! Desk-scale experiment procedures shared by the command line and the
//! acceptance suite: dataset resolution from a config, the stage-1 trend
//! run, the pipeline comparison and the noise grid.

use std::fmt;
use std::path::Path;

use crate::data::{
    load_dataset, resolve_cifar10_dir, synthetic_dataset, DatasetFormat, LabeledDataset, Split,
};
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, PipelineKind};
use crate::training::{
    eval_options, evaluate, run_stage, seeded_rng, DataSource, EpochMetrics, EvalOptions,
    LrSchedule, ScoreView, TrainConfig, METRICS_HEADER,
};
use crate::wae::encode;

/// Sample counts used for synthetic data when no limit is configured.
pub const SYNTHETIC_TRAIN: usize = 1000;
pub const SYNTHETIC_TEST: usize = 200;

/// The variance grid of the noise experiment.
pub const NOISE_VARIANCES: [f64; 5] = [0.0, 0.01, 0.02, 0.05, 0.1];

/// Loads the split named by `cfg.dataset`, truncated to the configured limit
/// in file order. CIFAR-10 falls back to `$WAE_CIFAR10_DIR` or
/// `data/cifar-10-batches-bin` under `root` when `data_dir` is unset.
pub fn load_split(cfg: &TrainConfig, split: Split, root: &Path) -> Result<LabeledDataset> {
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Test => cfg.test_limit,
    };
    let data = match cfg.dataset {
        DataSource::Cifar10 => {
            let dir = cfg
                .data_dir
                .clone()
                .or_else(|| resolve_cifar10_dir(root))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "CIFAR-10 binary batches not found; set data_dir, ${} or place them in {}",
                        crate::data::CIFAR10_ENV,
                        root.join("data/cifar-10-batches-bin").display()
                    ))
                })?;
            load_dataset(&dir, DatasetFormat::Cifar10Binary, split, 3)?
        }
        DataSource::Mnist => {
            let dir = cfg
                .data_dir
                .as_ref()
                .ok_or_else(|| Error::Config("dataset = mnist needs data_dir".into()))?;
            load_dataset(dir, DatasetFormat::MnistIdx, split, cfg.channels)?
        }
        DataSource::Synthetic => {
            let n = match (limit, split) {
                (0, Split::Train) => SYNTHETIC_TRAIN,
                (0, Split::Test) => SYNTHETIC_TEST,
                (n, _) => n,
            };
            synthetic_dataset(n, cfg.classes, cfg.channels, cfg.crop, cfg.seed, split)?
        }
    };
    Ok(if limit > 0 { data.take(limit) } else { data })
}

/// Freshly initialised pipeline from a seeded generator.
pub fn fresh_pipeline(
    kind: PipelineKind,
    channels: usize,
    classes: usize,
    seed: u64,
) -> Pipeline<f32> {
    Pipeline::new(kind, channels, classes, &mut seeded_rng(seed))
}

/// `mean(I_H^2) / mean(I_L^2)` over a whole dataset.
pub fn dataset_energy_ratio(p: &Pipeline<f32>, data: &LabeledDataset) -> Result<f64> {
    let wae = p.wae()?;
    let (mut low, mut high) = (0.0, 0.0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(100) {
        let (l, h) = encode(&data.images.gather(chunk), wae)?;
        low += l.sum_sq();
        high += h.sum_sq();
    }
    // both bands have the same element count
    Ok(high / (low + 1e-12))
}

/// Metrics log text exactly as [`crate::training::MetricsLog`] writes it.
pub fn metrics_text(log: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for rec in log {
        s.push_str(&rec.csv_line());
        s.push('\n');
    }
    s
}

/// Outcome of one stage-1 run.
#[derive(Clone, Debug)]
pub struct Stage1Run {
    pub seed: u64,
    pub log: Vec<EpochMetrics>,
    pub energy_init: f64,
    pub energy_final: f64,
    pub pipeline: Pipeline<f32>,
}

impl Stage1Run {
    fn lt(&self, i: usize) -> f64 {
        self.log[i].l_t.unwrap_or(f64::NAN)
    }

    pub fn first_lt(&self) -> f64 {
        self.lt(0)
    }

    pub fn final_lt(&self) -> f64 {
        self.lt(self.log.len() - 1)
    }

    pub fn lt_decreased(&self) -> bool {
        self.final_lt() < self.first_lt()
    }

    pub fn energy_decreased(&self) -> bool {
        self.energy_final < self.energy_init
    }
}

/// Trains a fresh auto-encoder on `train` with `cfg` (stage 1), measuring
/// the energy ratio over `train` before and after.
pub fn stage1_run(train: &LabeledDataset, cfg: &TrainConfig) -> Result<Stage1Run> {
    let mut cfg = cfg.clone();
    cfg.stage = 1;
    let [c, _, _] = train.image_shape();
    let mut p = fresh_pipeline(PipelineKind::Wae, c, train.classes, cfg.seed);
    let energy_init = dataset_energy_ratio(&p, train)?;
    let log = run_stage(&mut p, train, None, &cfg, &mut |_, _| Ok(()))?;
    let energy_final = dataset_energy_ratio(&p, train)?;
    Ok(Stage1Run {
        seed: cfg.seed,
        log,
        energy_init,
        energy_final,
        pipeline: p,
    })
}

/// Sizes and epoch counts of a comparison run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Profile {
    pub name: &'static str,
    /// Training images in file order; 0 keeps all.
    pub train_limit: usize,
    pub test_limit: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
}

impl Profile {
    /// Whole CIFAR-10, 20 classifier epochs.
    pub const FULL: Self = Self {
        name: "full",
        train_limit: 0,
        test_limit: 0,
        stage1_epochs: 5,
        stage2_epochs: 20,
        stage3_epochs: 5,
    };

    /// First 5,000 training and 1,000 test images; sized to finish three
    /// seeds within an hour on one core.
    pub const SUBSET: Self = Self {
        name: "subset",
        train_limit: 5000,
        test_limit: 1000,
        stage1_epochs: 2,
        stage2_epochs: 10,
        stage3_epochs: 2,
    };

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::FULL),
            "subset" => Ok(Self::SUBSET),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected full|subset)"
            ))),
        }
    }

    /// Stage config derived from the desk preset in `base`.
    pub fn stage_config(&self, base: &TrainConfig, stage: u8) -> Result<TrainConfig> {
        let mut c = TrainConfig::preset(base.preset, stage)?;
        inherit(&mut c, base);
        c.epochs = match stage {
            1 => self.stage1_epochs,
            2 => self.stage2_epochs,
            _ => self.stage3_epochs,
        };
        Ok(c)
    }
}

/// Test accuracies (fractions) of every model in one comparison seed.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub seed: u64,
    /// Auto-encoder pipeline after stage 3.
    pub wae: f64,
    /// The same pipeline at its stage-2 checkpoint.
    pub wae_stage2: f64,
    /// Stage-3 model scored on `s_L` alone.
    pub wae_low_only: f64,
    pub lowres: f64,
    pub wavelet: f64,
    pub decomposition: f64,
    pub fullres: Option<f64>,
    pub wae_model: Pipeline<f32>,
    pub fullres_model: Option<Pipeline<f32>>,
}

fn accuracy(p: &Pipeline<f32>, test: &LabeledDataset, opts: &EvalOptions) -> Result<f64> {
    Ok(evaluate(p, test, opts)?.accuracy())
}

/// Runs the three-stage schedule on the auto-encoder pipeline and stage 2
/// on every baseline, all from seed `base.seed`. `progress` receives one
/// line per finished model.
pub fn run_comparison(
    train: &LabeledDataset,
    test: &LabeledDataset,
    profile: &Profile,
    base: &TrainConfig,
    with_fullres: bool,
    progress: &mut dyn FnMut(&str),
) -> Result<Comparison> {
    let [c, _, _] = train.image_shape();
    let k = train.classes;
    let seed = base.seed;
    let cfg1 = profile.stage_config(base, 1)?;
    let cfg2 = profile.stage_config(base, 2)?;
    let cfg3 = profile.stage_config(base, 3)?;
    let opts = eval_options(&cfg2);
    let quiet = &mut |_: &EpochMetrics, _: &Pipeline<f32>| Ok(());

    let mut wae = fresh_pipeline(PipelineKind::Wae, c, k, seed);
    run_stage(&mut wae, train, None, &cfg1, quiet)?;
    run_stage(&mut wae, train, Some(test), &cfg2, quiet)?;
    let wae_stage2 = accuracy(&wae, test, &opts)?;
    progress(&format!(
        "seed {seed}: wae stage 2 accuracy {wae_stage2:.4}"
    ));
    run_stage(&mut wae, train, Some(test), &cfg3, quiet)?;
    let wae_acc = accuracy(&wae, test, &opts)?;
    let wae_low_only = accuracy(
        &wae,
        test,
        &EvalOptions {
            view: ScoreView::LowOnly,
            ..opts
        },
    )?;
    progress(&format!(
        "seed {seed}: wae stage 3 accuracy {wae_acc:.4} (I_L only {wae_low_only:.4})"
    ));

    let mut baseline = |kind: PipelineKind| -> Result<(f64, Pipeline<f32>)> {
        let mut p = fresh_pipeline(kind, c, k, seed);
        run_stage(&mut p, train, Some(test), &cfg2, quiet)?;
        let acc = accuracy(&p, test, &opts)?;
        progress(&format!("seed {seed}: {kind} accuracy {acc:.4}"));
        Ok((acc, p))
    };
    let (lowres, _) = baseline(PipelineKind::Lowres)?;
    let (wavelet, _) = baseline(PipelineKind::Wavelet)?;
    let (decomposition, _) = baseline(PipelineKind::Decomposition)?;
    let full = if with_fullres {
        Some(baseline(PipelineKind::Fullres)?)
    } else {
        None
    };
    Ok(Comparison {
        seed,
        wae: wae_acc,
        wae_stage2,
        wae_low_only,
        lowres,
        wavelet,
        decomposition,
        fullres: full.as_ref().map(|f| f.0),
        wae_model: wae,
        fullres_model: full.map(|f| f.1),
    })
}

/// One ordering claim `lhs >= rhs - slack`, in percentage points.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl Verdict {
    pub fn new(label: impl Into<String>, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            label: label.into(),
            lhs,
            rhs,
            slack,
        }
    }

    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs - self.slack
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {:.2} vs {:.2} (slack {:.1})",
            self.label, self.lhs, self.rhs, self.slack
        )
    }
}

fn mean_pp(runs: &[Comparison], f: impl Fn(&Comparison) -> f64) -> f64 {
    100.0 * runs.iter().map(f).sum::<f64>() / runs.len().max(1) as f64
}

/// The four ordering claims on seed-mean top-1 accuracy.
pub fn ordering_verdicts(runs: &[Comparison], slack_pp: f64) -> Vec<Verdict> {
    let wae = mean_pp(runs, |r| r.wae);
    vec![
        Verdict::new("wae >= lowres", wae, mean_pp(runs, |r| r.lowres), slack_pp),
        Verdict::new(
            "wae >= wavelet",
            wae,
            mean_pp(runs, |r| r.wavelet),
            slack_pp,
        ),
        Verdict::new(
            "wae >= decomposition",
            wae,
            mean_pp(runs, |r| r.decomposition),
            slack_pp,
        ),
        Verdict::new(
            "fusion >= I_L only",
            wae,
            mean_pp(runs, |r| r.wae_low_only),
            slack_pp,
        ),
        Verdict::new(
            "stage 3 >= stage 2",
            wae,
            mean_pp(runs, |r| r.wae_stage2),
            slack_pp,
        ),
    ]
}

/// Mean accuracy per variance over `noise_seeds` noise draws.
pub fn noise_curve(
    p: &Pipeline<f32>,
    test: &LabeledDataset,
    variances: &[f64],
    noise_seeds: u64,
    base: &EvalOptions,
) -> Result<Vec<f64>> {
    if noise_seeds == 0 {
        return Err(Error::invalid("noise_curve needs at least one noise seed"));
    }
    variances
        .iter()
        .map(|&v| {
            let mut sum = 0.0;
            for s in 0..noise_seeds {
                let opts = EvalOptions {
                    noise: (v > 0.0).then_some((v, s)),
                    ..*base
                };
                sum += accuracy(p, test, &opts)?;
            }
            Ok(sum / noise_seeds as f64)
        })
        .collect()
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let n = curves.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect()
}

/// Relative accuracy drop in percent of the clean accuracy.
fn relative_drop(curve: &[f64], i: usize) -> f64 {
    100.0 * (curve[0] - curve[i]) / curve[0].max(1e-12)
}

/// Monotonicity of both seed-mean curves, then the relative-drop comparison
/// at every variance of at least 0.02.
pub fn noise_verdicts(
    variances: &[f64],
    wae: &[Vec<f64>],
    fullres: &[Vec<f64>],
    slack_pp: f64,
) -> Vec<Verdict> {
    let (w, f) = (mean_curve(wae), mean_curve(fullres));
    let mut out = Vec::new();
    for (name, curve) in [("wae", &w), ("fullres", &f)] {
        for i in 1..curve.len() {
            out.push(Verdict::new(
                format!("{name} acc({}) >= acc({})", variances[i - 1], variances[i]),
                100.0 * curve[i - 1],
                100.0 * curve[i],
                slack_pp,
            ));
        }
    }
    for (i, &v) in variances.iter().enumerate() {
        if v >= 0.02 {
            // drop_wae <= drop_full  <=>  drop_full >= drop_wae
            out.push(Verdict::new(
                format!("fullres drop >= wae drop at {v}"),
                relative_drop(&f, i),
                relative_drop(&w, i),
                slack_pp,
            ));
        }
    }
    out
}

/// Stage-1 config for the trend run: the preset of `base` with `epochs`
/// epochs on a fixed schedule.
pub fn stage1_config(base: &TrainConfig, epochs: usize) -> Result<TrainConfig> {
    let mut c = TrainConfig::preset(base.preset, 1)?;
    inherit(&mut c, base);
    c.epochs = epochs;
    c.lr_schedule = LrSchedule::Fixed;
    Ok(c)
}

/// Copies the data-shaped and seed fields of `base` into a stage preset.
fn inherit(c: &mut TrainConfig, base: &TrainConfig) {
    c.seed = base.seed;
    c.classes = base.classes;
    c.channels = base.channels;
    c.dataset = base.dataset;
    c.data_dir = base.data_dir.clone();
    c.augment = base.augment;
    c.augment_base = base.augment_base;
    c.crop = base.crop;
}
