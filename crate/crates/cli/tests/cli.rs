use std::path::Path;
use std::process::{Command, Output};

use smamba::data::Manifest;
use smamba::{srt, Tensor};

fn smamba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smamba"))
        .args(args)
        .current_dir(dir)
        .env("SMAMBA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: [&str; 8] = [
    "--unet.level_channels",
    "[4,8,16,32]",
    "--unet.blocks_per_level",
    "1",
    "--unet.state_dim",
    "4",
    "--unet.head_channels",
    "4",
];

fn dataset(dir: &Path) {
    assert_eq!(code(&smamba(dir, &["phantom", "--out", "d", "--count", "4", "--test", "2", "--size", "32"])), 0);
    assert_eq!(code(&smamba(dir, &["degrade", "--data", "d", "--scale", "2"])), 0);
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", "d", "--out", "run", "--steps", "2", "--batch-size", "2"];
    args.extend(TINY);
    args.extend(extra);
    smamba(dir, &args)
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    let (m, _) = Manifest::read(&dir.join("d")).unwrap();
    assert_eq!(m.slices.len(), 4);
    assert_eq!(m.scale, Some(2));

    let o = train(dir, &["--checkpoint-every=1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.ckpt", "ckpt_000001.ckpt", "train_log.csv", "config.json"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    // The last step is saved once, as the final checkpoint.
    assert!(!dir.join("run/ckpt_000002.ckpt").exists());
    let log = std::fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let o = smamba(dir, &["eval", "--checkpoint", "run/model.ckpt", "--data", "d", "--out", "ev"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("bicubic"));
    let csv = std::fs::read_to_string(dir.join("ev/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1);

    let o = smamba(dir, &["sr", "--checkpoint", "run/model.ckpt", "--input", "d/lr_x2/slice_0000.srt", "--output", "up.srt"]);
    assert_eq!(code(&o), 0);
    let up: Tensor<f32> = srt::read(dir.join("up.srt")).unwrap();
    assert_eq!(up.shape(), [32, 32, 1]);
    assert!(up.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let o = smamba(dir, &["sr", "--checkpoint", "run/model.ckpt", "--input", "d/lr_x2/slice_0000.srt", "--output", "up.pgm"]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read(dir.join("up.pgm")).unwrap().starts_with(b"P5\n32 32\n65535\n"));
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.json"), r#"{"unet": {"blocks_per_level": 2}}"#).unwrap();
    let one = stdout(&smamba(dir, &["params", "--unet.blocks_per_level", "1"]));
    let file = stdout(&smamba(dir, &["params", "--config", "c.json"]));
    let both = stdout(&smamba(dir, &["params", "--config", "c.json", "--unet.blocks-per-level=1"]));
    assert_ne!(one, file);
    assert_eq!(one, both);
    let total = |s: &str| s.lines().find(|l| l.starts_with("total")).map(str::to_string).unwrap();
    assert!(total(&one).split_whitespace().last().unwrap().parse::<usize>().is_ok());
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for args in [
        vec!["frobnicate"],
        vec!["params", "--no_such_key", "1"],
        vec!["params", "--unet.scale"],
        vec!["params", "--unet.scale", "3"],
        vec!["params", "positional"],
        vec!["gradcheck", "--suite", "nope"],
        vec!["bench-scan", "--chunks", "0", "--length", "8"],
    ] {
        assert_eq!(code(&smamba(dir, &args)), 1, "{args:?}");
    }
    assert_eq!(code(&smamba(dir, &["--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&smamba(dir, &["eval", "--checkpoint", "missing.ckpt", "--data", "d", "--out", "e"])), 2);
    assert_eq!(code(&train(dir, &[])), 2);
    std::fs::write(dir.join("bad.pgm"), b"P2\n1 1\n255\n0").unwrap();
    dataset(dir);
    assert_eq!(code(&train(dir, &["--steps", "1"])), 0);
    let o = smamba(dir, &["sr", "--checkpoint", "run/model.ckpt", "--input", "bad.pgm", "--output", "x.pgm"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn nan_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    dataset(dir);
    let lr_dir = dir.join("d/lr_x2");
    for entry in std::fs::read_dir(&lr_dir).unwrap() {
        let path = entry.unwrap().path();
        let mut t: Tensor<f32> = srt::read_any(&path).unwrap();
        t.data_mut()[0] = f32::NAN;
        srt::write(&path, &t).unwrap();
    }
    let o = train(dir, &["--unet.use_self_prior", "false"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_and_bench_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = smamba(dir, &["gradcheck", "--suite", "iss2d", "--verbose"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("0 failed"), "{out}");
    assert!(out.lines().filter(|l| l.ends_with("ok")).count() >= 4);
    let o = smamba(dir, &["bench-scan", "--length", "64", "--channels", "4", "--chunks", "8,16", "--reps", "1"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("1 worker threads"));
    assert!(out.contains("chunked(8)") && out.contains("chunked(16)"));
}
