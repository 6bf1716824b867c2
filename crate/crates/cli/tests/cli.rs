use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &[&str] = &[
    "--set",
    "dataset=synthetic",
    "--set",
    "train_limit=48",
    "--set",
    "test_limit=24",
    "--set",
    "augment=false",
    "--set",
    "epochs=1",
    "--set",
    "classes=4",
    "--deterministic",
    "--seed",
    "5",
];

fn wae(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wae"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn wae")
}

fn toy(out: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend_from_slice(TOY);
    args.extend_from_slice(extra);
    wae(out, &args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", stderr(o));
}

#[test]
fn three_stages_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&toy(out, "train-wae", &[]));
    ok(&toy(out, "train-cls", &["--set", "batch_size=16"]));
    ok(&toy(out, "finetune", &["--set", "batch_size=16"]));
    let e = toy(out, "eval", &[]);
    ok(&e);
    let last = stdout(&e).lines().last().unwrap().to_string();
    assert!(last.contains("top1="), "{last}");

    for stage in 1..=3 {
        let metrics = fs::read_to_string(out.join(format!("stage{stage}_metrics.csv"))).unwrap();
        assert!(metrics.starts_with("epoch,stage,lr,l_r,l_e,l_t,L_c,top1,top5\n"));
        assert_eq!(metrics.lines().count(), 2);
        assert!(out.join(format!("stage{stage}.ckpt")).is_file());
    }
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("top1"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn eval_runs_the_noise_grid_and_low_view() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&toy(out, "train-wae", &[]));
    ok(&toy(out, "train-cls", &["--set", "batch_size=16"]));
    let e = toy(
        out,
        "eval",
        &[
            "--noise-variance",
            "0,0.01,0.1",
            "--noise-seeds",
            "2",
            "--view",
            "low",
        ],
    );
    ok(&e);
    let lines: Vec<String> = stdout(&e)
        .lines()
        .filter(|l| l.contains("top1="))
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.contains("view=low")));
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn decompose_writes_exactly_three_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&toy(out, "train-wae", &[]));
    let before: Vec<_> = fs::read_dir(out).unwrap().collect();
    ok(&toy(out, "decompose", &["--index", "2"]));
    let after = fs::read_dir(out).unwrap().count();
    assert_eq!(after - before.len(), 3);
    for (name, side) in [
        ("i_low.ppm", 16),
        ("i_high.ppm", 16),
        ("reconstruction.ppm", 32),
    ] {
        let bytes = fs::read(out.join(name)).unwrap();
        let header = format!("P6\n{side} {side}\n255\n");
        assert!(bytes.starts_with(header.as_bytes()), "{name}");
        assert_eq!(bytes.len(), header.len() + side * side * 3, "{name}");
    }
}

#[test]
fn decompose_accepts_a_ppm_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&toy(out, "train-wae", &[]));
    let img = dir.path().join("in.ppm");
    let mut bytes = b"P6\n8 6\n255\n".to_vec();
    bytes.extend((0..8 * 6 * 3).map(|i| (i * 7 % 256) as u8));
    fs::write(&img, bytes).unwrap();
    let sub = dir.path().join("dec");
    ok(&toy(
        &sub,
        "decompose",
        &[
            "--checkpoint",
            out.join("stage1.ckpt").to_str().unwrap(),
            "--image",
            img.to_str().unwrap(),
        ],
    ));
    let low = fs::read(sub.join("i_low.ppm")).unwrap();
    assert!(low.starts_with(b"P6\n4 3\n255\n"));
}

#[test]
fn flops_reports_vgg16_total() {
    let dir = tempfile::tempdir().unwrap();
    let o = wae(dir.path(), &["flops"]);
    ok(&o);
    let text = stdout(&o);
    let total_line = text.lines().find(|l| l.starts_with("total:")).unwrap();
    let total: f64 = total_line
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((total / 15.36e9 - 1.0).abs() < 0.02, "{total}");
    let csv = fs::read_to_string(dir.path().join("flops.csv")).unwrap();
    let csv_sum: f64 = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(csv_sum, total);

    let half = wae(dir.path(), &["flops", "--size", "112"]);
    let text = stdout(&half);
    let total_line = text.lines().find(|l| l.starts_with("total:")).unwrap();
    let total: f64 = total_line
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((total / 3.89e9 - 1.0).abs() < 0.02, "{total}");
}

#[test]
fn flops_counts_pipelines_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let total = |args: &[&str]| -> u64 {
        let o = wae(dir.path(), args);
        ok(&o);
        let text = stdout(&o);
        let line = text
            .lines()
            .find(|l| l.starts_with("total:"))
            .unwrap()
            .to_string();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    let w = total(&["flops", "--model", "wae", "--size", "32"]);
    let f = total(&["flops", "--model", "fullres", "--size", "32"]);
    assert!((w as f64) <= 0.35 * f as f64, "{w} vs {f}");
    assert_eq!(
        total(&["flops", "--model", "wae", "--size", "32", "--mul-add"]),
        2 * w
    );

    let table = dir.path().join("t.csv");
    fs::write(
        &table,
        "layer,kind,n_in,n_out,s,m\nc1,conv,3,8,3,32\nfc,linear,8,10,1,1\n",
    )
    .unwrap();
    assert_eq!(
        total(&["flops", "--table", table.to_str().unwrap()]),
        3 * 8 * 9 * 32 * 32 + 80
    );
}

#[test]
fn bench_times_requested_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let o = wae(
        dir.path(),
        &[
            "bench",
            "--kind",
            "wae,fullres",
            "--size",
            "16",
            "--reps",
            "3",
            "--warmup",
            "1",
        ],
    );
    ok(&o);
    let text = stdout(&o);
    assert!(text.contains("fullres / wae"), "{text}");
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn baseline_kinds_train() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["wavelet", "decomposition", "lowres", "fullres"] {
        ok(&toy(
            dir.path(),
            "baseline",
            &["--kind", kind, "--set", "batch_size=16"],
        ));
        assert!(dir.path().join(format!("baseline_{kind}.ckpt")).is_file());
        let m =
            fs::read_to_string(dir.path().join(format!("baseline_{kind}_metrics.csv"))).unwrap();
        assert_eq!(m.lines().count(), 2);
    }
    let bad = toy(dir.path(), "baseline", &["--kind", "wae"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn deterministic_runs_write_identical_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&toy(d.path(), "train-wae", &["--set", "epochs=2"]));
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("stage1_metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let ckpt = |d: &tempfile::TempDir| fs::read(d.path().join("stage1.ckpt")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));
}

#[test]
fn config_errors_exit_2_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = wae(&out, &["train-wae", "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonsense"));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(!out.exists());

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lr = 0.1\nmystery = 3\n").unwrap();
    let o = wae(&out, &["eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mystery"));

    let o = wae(&out, &["train-cls", "--set", "stage=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wae(&out, &["train-wae", "--set", "batch_size=zero"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wae(&out, &["launch"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    fs::write(
        &cfg,
        "# toy run\ndataset = synthetic\ntrain_limit = 16\naugment = false\nepochs = 2\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = wae(&out, &["train-wae", "--config", cfg.to_str().unwrap()]);
    ok(&o);
    let written = fs::read_to_string(out.join("stage1.config")).unwrap();
    assert!(written.contains("train_limit = 16"));
    let m = fs::read_to_string(out.join("stage1_metrics.csv")).unwrap();
    assert_eq!(m.lines().count(), 3);
}

#[test]
fn missing_checkpoints_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for cmd in ["train-cls", "finetune", "eval", "decompose"] {
        let o = toy(out, cmd, &[]);
        assert_eq!(o.status.code(), Some(3), "{cmd}: {}", stderr(&o));
        assert_eq!(stderr(&o).lines().count(), 1);
    }
    // a stage-1 checkpoint is not enough for fine-tuning
    ok(&toy(out, "train-wae", &[]));
    let o = toy(
        out,
        "finetune",
        &["--from", out.join("stage1.ckpt").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn diverging_loss_exits_4_naming_the_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = toy(dir.path(), "train-wae", &["--set", "lr=1e30"]);
    assert_eq!(o.status.code(), Some(4));
    let err = stderr(&o);
    assert!(err.contains("epoch 1"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cmds = [
        ("train-wae", "--from"),
        ("train-cls", "--from"),
        ("finetune", "--from"),
        ("eval", "--noise-variance"),
        ("decompose", "--index"),
        ("flops", "--model"),
        ("bench", "--reps"),
        ("baseline", "--kind"),
    ];
    for (cmd, flag) in cmds {
        let o = wae(dir.path(), &[cmd, "--help"]);
        ok(&o);
        let text = stdout(&o);
        for f in [
            flag,
            "--config",
            "--set",
            "--out",
            "--seed",
            "--deterministic",
            "--precision",
        ] {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn precision_check_runs_the_gradient_suite_first() {
    let dir = tempfile::tempdir().unwrap();
    let o = wae(dir.path(), &["flops", "--precision", "f64-check"]);
    ok(&o);
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.starts_with("gradient check:"), "{first}");
}
