use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wae_core::baselines::build_baseline;
use wae_core::checks::gradient_suite;
use wae_core::data::{
    export_image, high_channel_view, load_pipeline, read_pnm, save_pipeline, LabeledDataset, Split,
};
use wae_core::experiments::{fresh_pipeline, load_split};
use wae_core::flops::{
    count_model_flops, interleaved_speedup, parse_layer_table, pipeline_layers, vgg16_layers,
    wall_clock_bench, FlopConvention,
};
use wae_core::training::{
    eval_options, evaluate, parse_entries, parse_override, run_stage, seeded_rng, EvalOptions,
    MetricsLog, ScoreView, TrainConfig,
};
use wae_core::wae::{decode, encode};
use wae_core::{par, Error, Pipeline, PipelineKind, Result, Tensor};

use crate::{BaselineKind, Cli, Command, Global, Precision, View};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    // config problems surface before anything is written
    let cfg = config(g, stage_of(&cli.command))?;
    if g.deterministic {
        par::set_sequential(true);
    }
    fs::create_dir_all(&g.out)?;
    if g.precision == Precision::F64Check {
        precision_check()?;
    }
    match &cli.command {
        Command::TrainWae { from } => train(g, &cfg, from.as_deref(), "wae"),
        Command::TrainCls { from } => train(g, &cfg, from.as_deref(), "wae"),
        Command::Finetune { from } => train(g, &cfg, from.as_deref(), "wae"),
        Command::Baseline { kind } => train(g, &cfg, None, baseline_name(*kind)),
        Command::Eval {
            checkpoint,
            noise_variance,
            noise_seeds,
            view,
        } => eval(
            g,
            &cfg,
            checkpoint.as_deref(),
            noise_variance,
            *noise_seeds,
            *view,
        ),
        Command::Decompose {
            checkpoint,
            index,
            image,
        } => decompose(g, &cfg, checkpoint.as_deref(), *index, image.as_deref()),
        Command::Flops {
            model,
            size,
            table,
            mul_add,
        } => flops(g, &cfg, model, *size, table.as_deref(), *mul_add),
        Command::Bench {
            kind,
            size,
            reps,
            warmup,
        } => bench(g, &cfg, kind, *size, *reps, *warmup),
    }
}

/// Stage a command trains, if any.
fn stage_of(cmd: &Command) -> Option<u8> {
    match cmd {
        Command::TrainWae { .. } => Some(1),
        Command::TrainCls { .. } | Command::Baseline { .. } => Some(2),
        Command::Finetune { .. } => Some(3),
        _ => None,
    }
}

fn baseline_name(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::Wavelet => "wavelet",
        BaselineKind::Decomposition => "decomposition",
        BaselineKind::Lowres => "lowres",
        BaselineKind::Fullres => "fullres",
    }
}

/// File entries, then `--set` overrides, then `--seed`. Commands that do not
/// train take the stage from the file (stage 2 if absent).
fn config(g: &Global, stage: Option<u8>) -> Result<TrainConfig> {
    let mut entries = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            parse_entries(&text)?
        }
        None => Vec::new(),
    };
    for o in &g.overrides {
        entries.push(parse_override(o)?);
    }
    let stage = match stage {
        Some(s) => s,
        None => match entries.iter().rev().find(|(k, _)| k == "stage") {
            Some((_, v)) => v
                .parse()
                .map_err(|_| Error::Config(format!("`stage`: cannot parse `{v}`")))?,
            None => 2,
        },
    };
    let mut cfg = TrainConfig::from_entries(&entries, stage)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn precision_check() -> Result<()> {
    let reports = gradient_suite(1)?;
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(Error::InvalidArgument(format!(
            "gradient check failed: {bad}"
        )));
    }
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    println!(
        "gradient check: {} reports within tolerance (worst relative error {worst:.2e})",
        reports.len()
    );
    Ok(())
}

fn data_root() -> PathBuf {
    std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."))
}

fn missing(stage: u8, path: &Path, hint: &str) -> Error {
    Error::MissingPrerequisite {
        stage,
        msg: format!("checkpoint {} not found ({hint})", path.display()),
    }
}

fn load_required(path: &Path, stage: u8, hint: &str) -> Result<Pipeline<f32>> {
    if !path.is_file() {
        return Err(missing(stage, path, hint));
    }
    Ok(load_pipeline::<f32>(path)?.0)
}

/// First existing checkpoint among `names` under the output directory.
fn latest(out: &Path, names: &[&str], stage: u8) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| out.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::MissingPrerequisite {
            stage,
            msg: format!(
                "no checkpoint in {} (looked for {})",
                out.display(),
                names.join(", ")
            ),
        })
}

fn train(g: &Global, cfg: &TrainConfig, from: Option<&Path>, kind: &str) -> Result<()> {
    let stage = cfg.stage;
    let train_set = load_split(cfg, Split::Train, &data_root())?;
    let [channels, _, _] = train_set.image_shape();
    let baseline = kind != "wae";
    let mut p = if baseline {
        let kind: PipelineKind = kind.parse()?;
        build_baseline(kind, channels, train_set.classes, &mut seeded_rng(cfg.seed))?
    } else {
        match (stage, from) {
            (1, None) => fresh_pipeline(PipelineKind::Wae, channels, train_set.classes, cfg.seed),
            (_, Some(path)) => load_required(path, stage, "pass an existing --from")?,
            (s, None) => {
                let prev = s - 1;
                let path = g.out.join(format!("stage{prev}.ckpt"));
                let hint = if prev == 1 {
                    "run train-wae first"
                } else {
                    "run train-cls first"
                };
                load_required(&path, stage, hint)?
            }
        }
    };
    let eval_set = if stage >= 2 {
        Some(load_split(cfg, Split::Test, &data_root())?)
    } else {
        None
    };
    let tag = if baseline {
        format!("baseline_{kind}")
    } else {
        format!("stage{stage}")
    };
    fs::write(g.out.join(format!("{tag}.config")), cfg.to_text())?;
    let log = MetricsLog::open(&g.out.join(format!("{tag}_metrics.csv")))?;
    let ckpt = g.out.join(format!("{tag}.ckpt"));
    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), cfg.hash());
    meta.insert("seed".to_string(), cfg.seed.to_string());
    println!(
        "{tag}: {} {} images, {} epochs, config {}",
        train_set.len(),
        cfg.dataset.name(),
        cfg.epochs,
        cfg.hash()
    );
    run_stage(&mut p, &train_set, eval_set.as_ref(), cfg, &mut |rec, _| {
        log.append(rec)?;
        println!("{tag} {}", rec.csv_line());
        Ok(())
    })?;
    save_pipeline(&p, &meta, &ckpt)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn eval(
    g: &Global,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    variances: &[f64],
    noise_seeds: u64,
    view: View,
) -> Result<()> {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest(&g.out, &["stage3.ckpt", "stage2.ckpt"], 2)?,
    };
    let p = load_required(&path, 2, "train a classifier first")?;
    if p.completed_stage < 2 {
        return Err(Error::MissingPrerequisite {
            stage: 2,
            msg: format!("{} holds no trained classifier", path.display()),
        });
    }
    if noise_seeds == 0 {
        return Err(Error::Config("--noise-seeds must be >= 1".into()));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Config(format!("noise variance {v} must be >= 0")));
    }
    let test = load_split(cfg, Split::Test, &data_root())?;
    let base = EvalOptions {
        view: match view {
            View::Fused => ScoreView::Fused,
            View::Low => ScoreView::LowOnly,
        },
        ..eval_options(cfg)
    };
    let grid: Vec<f64> = if variances.is_empty() {
        vec![0.0]
    } else {
        variances.to_vec()
    };
    let view_name = match view {
        View::Fused => "fused",
        View::Low => "low",
    };
    let mut csv = String::from("checkpoint,view,variance,noise_seeds,top1,top5,samples\n");
    for &v in &grid {
        let draws = if v > 0.0 { noise_seeds } else { 1 };
        let (mut top1, mut top5, mut samples) = (0.0, 0.0, 0);
        for s in 0..draws {
            let opts = EvalOptions {
                noise: (v > 0.0).then_some((v, s)),
                ..base
            };
            let r = evaluate(&p, &test, &opts)?;
            top1 += r.top1;
            top5 += r.top5;
            samples = r.samples;
        }
        let (top1, top5) = (top1 / draws as f64, top5 / draws as f64);
        let _ = writeln!(
            csv,
            "{},{view_name},{v},{draws},{top1},{top5},{samples}",
            path.display()
        );
        println!(
            "{} view={view_name} variance={v} top1={top1:.4} top5={top5:.4} samples={samples}",
            p.kind
        );
    }
    fs::write(g.out.join("eval.csv"), csv)?;
    Ok(())
}

fn image_from_pnm(path: &Path) -> Result<Tensor<f32>> {
    let pnm = read_pnm(&fs::read(path)?)?;
    let (c, h, w) = (pnm.channels, pnm.height, pnm.width);
    let plane = h * w;
    let mut data = vec![0.0f32; c * plane];
    for (i, &b) in pnm.pixels.iter().enumerate() {
        data[(i % c) * plane + i / c] = f32::from(b) / 255.0;
    }
    Tensor::from_vec([1, c, h, w], data)
}

fn decompose(
    g: &Global,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    index: usize,
    image: Option<&Path>,
) -> Result<()> {
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest(&g.out, &["stage3.ckpt", "stage2.ckpt", "stage1.ckpt"], 1)?,
    };
    let p = load_required(&path, 1, "run train-wae first")?;
    let wae = p.wae().map_err(|_| Error::MissingPrerequisite {
        stage: 1,
        msg: format!(
            "{} is a `{}` pipeline without an auto-encoder",
            path.display(),
            p.kind
        ),
    })?;
    let x = match image {
        Some(file) => image_from_pnm(file)?,
        None => {
            let test: LabeledDataset = load_split(cfg, Split::Test, &data_root())?;
            if index >= test.len() {
                return Err(Error::InvalidArgument(format!(
                    "--index {index} out of range (test split has {} images)",
                    test.len()
                )));
            }
            test.images.gather(&[index])
        }
    };
    let (low, high) = encode(&x, wae)?;
    let recon = decode(&low, &high, wae)?.image;
    let files = [
        ("i_low.ppm", low),
        ("i_high.ppm", high_channel_view(&high)),
        ("reconstruction.ppm", recon),
    ];
    for (name, t) in &files {
        let target = g.out.join(name);
        export_image(t, &target)?;
        println!("wrote {}", target.display());
    }
    Ok(())
}

fn flops(
    g: &Global,
    cfg: &TrainConfig,
    model: &str,
    size: Option<usize>,
    table: Option<&Path>,
    mul_add: bool,
) -> Result<()> {
    let layers = match (table, model) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)?;
            parse_layer_table(&text, "table")?
        }
        (None, "vgg16") => vgg16_layers(size.unwrap_or(224), 1000),
        (None, kind) => {
            let kind: PipelineKind = kind
                .parse()
                .map_err(|e: Error| Error::Config(e.to_string()))?;
            pipeline_layers(kind, cfg.channels, cfg.classes, size.unwrap_or(cfg.crop))?
        }
    };
    let convention = if mul_add {
        FlopConvention::MulAdd
    } else {
        FlopConvention::Mac
    };
    let report = count_model_flops(&layers, convention)?;
    println!("{report}");
    let csv = g.out.join("flops.csv");
    fs::write(&csv, report.to_csv())?;
    println!("wrote {}", csv.display());
    Ok(())
}

fn bench(
    g: &Global,
    cfg: &TrainConfig,
    kinds: &[String],
    size: usize,
    reps: usize,
    warmup: usize,
) -> Result<()> {
    let kinds: Vec<PipelineKind> = kinds
        .iter()
        .map(|k| k.parse().map_err(|e: Error| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;
    let mut csv = String::from("kind,size,median_ms,mean_ms,std_ms,min_ms,reps,counted_macs\n");
    let mut built = Vec::new();
    for &kind in &kinds {
        let p = fresh_pipeline(kind, cfg.channels, cfg.classes, cfg.seed);
        let stats = wall_clock_bench(&p, size, warmup, reps)?;
        let macs = count_model_flops(
            &pipeline_layers(kind, cfg.channels, cfg.classes, size)?,
            FlopConvention::Mac,
        )?
        .total;
        println!("{kind:<13} {stats}  macs {macs}");
        let _ = writeln!(
            csv,
            "{kind},{size},{},{},{},{},{},{macs}",
            stats.median * 1e3,
            stats.mean * 1e3,
            stats.std * 1e3,
            stats.min * 1e3,
            stats.reps
        );
        built.push(p);
    }
    let find = |k: PipelineKind| built.iter().find(|p| p.kind == k);
    if let (Some(full), Some(wae)) = (find(PipelineKind::Fullres), find(PipelineKind::Wae)) {
        let ratio = interleaved_speedup(full, wae, size, warmup, reps)?;
        println!("fullres / wae wall-clock (interleaved median): {ratio:.3}");
    }
    let path = g.out.join("bench.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}
