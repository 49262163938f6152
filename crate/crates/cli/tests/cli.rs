use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use detailnet::io::netpbm::{self, PnmKind};
use detailnet::io::sample_paths;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detailnet"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn validation_and_runtime_exit_codes() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--preset", "huge", "gradcheck"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "batch_size=zero\n").unwrap();
    let out = run(&["--config", p(&cfg), "synth", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.cfg:1:"));

    let missing = dir.path().join("nope.ppm");
    let out_path = dir.path().join("d.pgm");
    let no_ckpt = run(&[
        "--preset",
        "toy",
        "predict",
        "--input",
        p(&missing),
        "--out",
        p(&out_path),
    ]);
    assert_eq!(no_ckpt.status.code(), Some(1));
    let ckpt = dir.path().join("w.ckpt");
    let args = [
        "--preset",
        "toy",
        "predict",
        "--input",
        p(&missing),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&out_path),
    ];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gradcheck_reports_every_row_passing() {
    let stdout = ok(&["gradcheck", "--instances", "1", "--coords", "4"]);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.contains("max_rel_err")).collect();
    assert_eq!(rows.len(), detailnet::gradcheck::FAMILIES.len());
    assert!(rows.iter().all(|r| r.ends_with("PASS")), "{stdout}");
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let ckpt = root.join("w.ckpt");
    ok(&[
        "--seed",
        "3",
        "synth",
        "--out",
        p(&data),
        "--count",
        "3",
        "--height",
        "32",
        "--width",
        "48",
    ]);
    let (rgb, _, meta) = sample_paths(&data, "synth_00000");
    assert!(rgb.exists() && meta.exists());

    let toy = ["--preset", "toy", "--deterministic"];
    let train = |extra: &[&str]| {
        let mut args = toy.to_vec();
        args.extend(["train", "--data", p(&data), "--checkpoint", p(&ckpt)]);
        args.extend(extra);
        ok(&args)
    };
    train(&["--steps", "2"]);
    let csv = fs::read_to_string(root.join("w.ckpt.loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,loss,lr_dfe,lr_dmg"));
    assert_eq!(csv.lines().count(), 3);
    let first = fs::read(&ckpt).unwrap();
    train(&["--steps", "2"]);
    assert_eq!(fs::read(&ckpt).unwrap(), first, "training is not reproducible");
    train(&["--steps", "3", "--resume"]);
    assert_eq!(
        fs::read_to_string(root.join("w.ckpt.loss.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let depth = root.join("d.pgm");
    let predict = |out: &Path, resize: bool| {
        let mut args = toy.to_vec();
        args.extend(["predict", "--input", p(&rgb), "--checkpoint", p(&ckpt), "--out", p(out)]);
        if resize {
            args.push("--resize");
        }
        ok(&args);
        netpbm::read(out, PnmKind::Gray).unwrap()
    };
    let half = predict(&depth, false);
    assert_eq!((half.width, half.height, half.maxval), (24, 16, 65535));
    let full = predict(&root.join("full.pgm"), true);
    assert_eq!((full.width, full.height), (48, 32));
    assert_eq!(predict(&root.join("again.pgm"), false), half);

    let ply = root.join("c.ply");
    ok(&[
        "pointcloud",
        "--input",
        p(&rgb),
        "--depth",
        p(&depth),
        "--meta",
        p(&meta),
        "--out",
        p(&ply),
    ]);
    let cloud = detailnet::apps::parse_ply(&fs::read_to_string(&ply).unwrap()).unwrap();
    assert_eq!(cloud.len(), 24 * 16);

    let blurred = root.join("b.ppm");
    ok(&[
        "bokeh",
        "--input",
        p(&rgb),
        "--depth",
        p(&depth),
        "--focus",
        "1.5",
        "--out",
        p(&blurred),
    ]);
    let img = netpbm::read(&blurred, PnmKind::Rgb).unwrap();
    assert_eq!((img.width, img.height), (48, 32));
    let out = run(&[
        "bokeh",
        "--input",
        p(&rgb),
        "--depth",
        p(&depth),
        "--focus",
        "-2",
        "--out",
        p(&blurred),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let report = root.join("r.csv");
    let mut args = toy.to_vec();
    args.extend([
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ckpt),
        "--csv",
        p(&report),
    ]);
    let stdout = ok(&args);
    assert!(
        stdout.contains("rel=") && stdout.contains("pixel_count=4608"),
        "{stdout}"
    );
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("rel,rms,log10,delta1,delta2,delta3,pixel_count\n"));
}
