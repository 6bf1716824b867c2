//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//!
//! Criteria 5, 6 and 8 need the CIFAR-10 binary batches (`$WAE_CIFAR10_DIR`
//! or `data/cifar-10-batches-bin` at the workspace root). Criteria 6 and 8
//! train every pipeline and only run when `WAE_ACCEPTANCE_LONG` names a
//! profile (`subset` or `full`). Criterion 9 falls back to a synthetic
//! dataset written in the CIFAR-10 binary layout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use wae_core::baselines::{dwt97_forward, dwt97_inverse};
use wae_core::checks::gradient_suite;
use wae_core::data::{
    load_cifar10_file, resolve_cifar10_dir, synthetic_dataset, write_cifar10_file, LabeledDataset,
    Split,
};
use wae_core::experiments::{
    load_split, noise_curve, noise_verdicts, ordering_verdicts, run_comparison, stage1_config,
    stage1_run, Profile, Verdict, NOISE_VARIANCES,
};
use wae_core::flops::{
    acceleration_bound, count_model_flops, pipeline_layers, vgg16_layers, FlopConvention,
};
use wae_core::training::{eval_options, seeded_rng, MetricsLog, Preset, TrainConfig};
use wae_core::{par, PipelineKind, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        pass: false,
        detail: detail.into(),
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome { pass: ok, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cifar_missing() -> String {
    format!(
        "CIFAR-10 not found (set {} or place the binary batches in data/cifar-10-batches-bin)",
        wae_core::data::CIFAR10_ENV
    )
}

fn cifar_base(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Desk, 1).expect("desk preset");
    c.seed = seed;
    c
}

fn c1() -> Outcome {
    let start = Instant::now();
    let reports = match gradient_suite(10) {
        Ok(r) => r,
        Err(e) => return fail(format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = |pred: &dyn Fn(&str, &str) -> bool| {
        reports
            .iter()
            .filter(|r| pred(&r.name, r.precision))
            .map(|r| r.worst)
            .fold(0.0, f64::max)
    };
    let w32 = worst(&|n, p| p == "f32" && !n.starts_with("model"));
    let w64 = worst(&|n, p| p == "f64" && !n.starts_with("model"));
    let wm = worst(&|n, _| n.starts_with("model"));
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.to_string())
        .collect();
    let seeds = reports.iter().map(|r| r.seed).max().unwrap_or(0) + 1;
    let ok = failed.is_empty() && seeds >= 10 && elapsed < Duration::from_secs(120);
    let mut detail = format!(
        "{} checks over {seeds} seeds; worst f32 {w32:.2e} (< 1e-3), f64 {w64:.2e} (< 1e-6), whole model {wm:.2e} (< 1e-4); {}",
        reports.len(),
        secs(elapsed)
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failing: {}", failed.join(" | ")));
    }
    verdict(ok, detail)
}

fn c2() -> Outcome {
    let start = Instant::now();
    let total =
        |m| count_model_flops(&vgg16_layers(m, 1000), FlopConvention::Mac).map(|r| r.total as f64);
    let (full, half) = match (total(224), total(112)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let within = |v: f64, target: f64| ((v - target) / target).abs() <= 0.02;
    verdict(
        within(full, 15.36e9) && within(half, 3.89e9) && elapsed < Duration::from_secs(1),
        format!(
            "VGG16 224: {:.3}e9 (15.36e9 +-2%), 112: {:.3}e9 (3.89e9 +-2%); {}",
            full / 1e9,
            half / 1e9,
            secs(elapsed)
        ),
    )
}

fn c3() -> Outcome {
    match acceleration_bound(0.25, 1.0 / 64.0) {
        Ok(b) => verdict(
            (b - 3.76).abs() <= 0.01,
            format!("acceleration_bound(1/4, 1/64) = {b:.4} (3.76 +-0.01)"),
        ),
        Err(e) => fail(e.to_string()),
    }
}

fn c4() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let data: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.random::<f32>()).collect();
        let img = Tensor::from_vec([1, 3, 64, 64], data).expect("shape");
        let back = dwt97_forward(&img).and_then(|b| dwt97_inverse(&b));
        match back.and_then(|r| r.max_abs_diff(&img)) {
            Ok(d) => worst = worst.max(d),
            Err(e) => return fail(e.to_string()),
        }
    }
    let mut detail_max = 0.0f64;
    for value in [0.0, 0.37, 1.0] {
        let img = Tensor::<f64>::full([1, 3, 64, 64], value);
        match dwt97_forward(&img) {
            Ok(b) => {
                for band in [&b.ch, &b.cv, &b.cd] {
                    detail_max =
                        detail_max.max(band.data().iter().fold(0.0, |m, v| m.max(v.abs())));
                }
            }
            Err(e) => return fail(e.to_string()),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-6 && detail_max < 1e-10 && elapsed < Duration::from_secs(10),
        format!(
            "round trip max |err| {worst:.2e} over 100 images (< 1e-6); constant-image detail {detail_max:.2e} (< 1e-10); {}",
            secs(elapsed)
        ),
    )
}

fn c5(root: &Path) -> Outcome {
    if resolve_cifar10_dir(root).is_none() {
        return fail(cifar_missing());
    }
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let base = cifar_base(seed);
        let run = load_split(&base, Split::Train, root)
            .map(|d| d.take(1000))
            .and_then(|train| stage1_run(&train, &stage1_config(&base, 5)?));
        match run {
            Ok(r) => {
                ok &= r.lt_decreased() && r.energy_decreased();
                lines.push(format!(
                    "seed {seed}: L_t {:.4} -> {:.4}, energy {:.4} -> {:.4}",
                    r.first_lt(),
                    r.final_lt(),
                    r.energy_init,
                    r.energy_final
                ));
            }
            Err(e) => return fail(format!("seed {seed}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(15 * 60);
    verdict(ok, format!("{}; {}", lines.join("; "), secs(elapsed)))
}

fn long_profile() -> Option<Profile> {
    std::env::var("WAE_ACCEPTANCE_LONG")
        .ok()
        .and_then(|p| Profile::by_name(&p).ok())
}

/// Criteria 6 and 8 share the trained models.
fn c6_c8(root: &Path) -> (Outcome, Outcome) {
    if resolve_cifar10_dir(root).is_none() {
        return (fail(cifar_missing()), fail(cifar_missing()));
    }
    let Some(profile) = long_profile() else {
        let why =
            "not run: training every pipeline takes hours; set WAE_ACCEPTANCE_LONG=subset|full";
        return (fail(why), fail(why));
    };
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in 0..3 {
        let mut base = cifar_base(seed);
        base.train_limit = profile.train_limit;
        base.test_limit = profile.test_limit;
        let result = load_split(&base, Split::Train, root).and_then(|train| {
            let test = load_split(&base, Split::Test, root)?;
            run_comparison(&train, &test, &profile, &base, true, &mut |l| {
                eprintln!("{l}")
            })
            .map(|r| (r, test))
        });
        match result {
            Ok(r) => runs.push(r),
            Err(e) => {
                let o = fail(format!("seed {seed}: {e}"));
                return (o, fail("comparison run failed"));
            }
        }
    }
    let train_time = start.elapsed();
    let comparisons: Vec<_> = runs.iter().map(|(r, _)| r.clone()).collect();
    let order = ordering_verdicts(&comparisons, 0.3);
    let mut ok6 = order.iter().all(Verdict::holds);
    if profile == Profile::SUBSET {
        ok6 &= train_time < Duration::from_secs(3600);
    }
    let c6 = verdict(
        ok6,
        format!(
            "profile {}: {}; {}",
            profile.name,
            order
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
            secs(train_time)
        ),
    );

    let start = Instant::now();
    let opts = eval_options(&cifar_base(0));
    let mut wae_curves = Vec::new();
    let mut full_curves = Vec::new();
    for (r, test) in &runs {
        let full = r.fullres_model.as_ref().expect("trained with fullres");
        match (
            noise_curve(&r.wae_model, test, &NOISE_VARIANCES, 3, &opts),
            noise_curve(full, test, &NOISE_VARIANCES, 3, &opts),
        ) {
            (Ok(w), Ok(f)) => {
                wae_curves.push(w);
                full_curves.push(f);
            }
            (Err(e), _) | (_, Err(e)) => return (c6, fail(e.to_string())),
        }
    }
    let noise = noise_verdicts(&NOISE_VARIANCES, &wae_curves, &full_curves, 0.5);
    let elapsed = start.elapsed();
    let c8 = verdict(
        noise.iter().all(Verdict::holds) && elapsed < Duration::from_secs(600),
        format!(
            "{}; {}",
            noise
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
            secs(elapsed)
        ),
    );
    (c6, c8)
}

fn c7() -> Outcome {
    let total = |k| {
        pipeline_layers(k, 3, 10, 32)
            .and_then(|l| count_model_flops(&l, FlopConvention::Mac))
            .map(|r| r.total as f64)
    };
    match (total(PipelineKind::Wae), total(PipelineKind::Fullres)) {
        (Ok(w), Ok(f)) => verdict(
            w <= 0.35 * f,
            format!(
                "WAE {:.2}M vs full resolution {:.2}M MACs at 32x32: ratio {:.3} (<= 0.35)",
                w / 1e6,
                f / 1e6,
                w / f
            ),
        ),
        (Err(e), _) | (_, Err(e)) => fail(e.to_string()),
    }
}

/// The 1,000-image stage-1 set: real CIFAR-10 when present, otherwise a
/// synthetic set written and re-read in the CIFAR-10 binary layout.
fn determinism_data(root: &Path, scratch: &Path) -> Result<(LabeledDataset, &'static str), String> {
    if resolve_cifar10_dir(root).is_some() {
        let d = load_split(&cifar_base(0), Split::Train, root).map_err(|e| e.to_string())?;
        return Ok((d.take(1000), "CIFAR-10"));
    }
    let file = scratch.join("synthetic_batch.bin");
    synthetic_dataset(1000, 10, 3, 32, 9, Split::Train)
        .and_then(|d| write_cifar10_file(&d, &file))
        .and_then(|_| load_cifar10_file(&file, Split::Train))
        .map(|d| (d, "synthetic CIFAR-format set (CIFAR-10 absent)"))
        .map_err(|e| e.to_string())
}

fn c9(root: &Path) -> Outcome {
    let start = Instant::now();
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    let (train, source) = match determinism_data(root, dir.path()) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    par::set_sequential(true);
    let mut logs = Vec::new();
    for rep in 0..2 {
        let path = dir.path().join(format!("metrics_{rep}.csv"));
        let run = stage1_config(&cifar_base(0), 5)
            .and_then(|cfg| stage1_run(&train, &cfg))
            .and_then(|r| {
                let log = MetricsLog::open(&path)?;
                r.log.iter().try_for_each(|rec| log.append(rec))
            });
        if let Err(e) = run {
            par::set_sequential(false);
            return fail(e.to_string());
        }
        match std::fs::read(&path) {
            Ok(b) => logs.push(b),
            Err(e) => return fail(e.to_string()),
        }
    }
    par::set_sequential(false);
    verdict(
        logs[0] == logs[1] && !logs[0].is_empty(),
        format!(
            "two seeded stage-1 runs on {source}: metrics logs {} ({} bytes); {}",
            if logs[0] == logs[1] {
                "byte-identical"
            } else {
                "differ"
            },
            logs[0].len(),
            secs(start.elapsed())
        ),
    )
}

fn main() -> ExitCode {
    let root = workspace_root();
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "gradient suite", c1()),
        (2, "VGG16 FLOP accounting", c2()),
        (3, "acceleration bound", c3()),
        (4, "DWT 9/7 round trip", c4()),
        (5, "stage-1 trend on CIFAR-10", c5(&root)),
    ];
    let (o6, o8) = c6_c8(&root);
    results.push((6, "end-to-end ordering", o6));
    results.push((7, "counted-FLOPs reduction", c7()));
    results.push((8, "noise robustness trend", o8));
    results.push((9, "determinism", c9(&root)));
    results.sort_by_key(|r| r.0);
    let mut failures = 0;
    for (id, name, o) in &results {
        failures += usize::from(!o.pass);
        println!(
            "[{}] C{id} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        results.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
