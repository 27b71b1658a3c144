use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn disalign(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disalign"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn disalign")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = disalign(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--set", "data.num_classes=8",
    "--set", "data.feature_dim=6",
    "--set", "data.max_count=80",
    "--set", "data.min_count=4",
    "--set", "data.test_per_class=15",
    "--set", "data.bound_per_class=40",
    "--set", "model.hidden=12",
    "--set", "stage1.epochs=20",
    "--set", "stage2.epochs=3",
    "--set", "retrain.epochs=3",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = SMALL.to_vec();
    v.extend_from_slice(args);
    v
}

/// Report JSON without the predictor label, which names the method.
fn metrics(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"predictor\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn report_accuracy(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.contains("\"balanced_accuracy\"")).unwrap();
    line.split(':').nth(1).unwrap().trim().trim_end_matches(',').parse().unwrap()
}

#[test]
fn untrained_head_scores_at_chance_on_uninformative_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    // Class means of zero make features independent of labels, so on a
    // balanced test set each prediction is right with probability exactly 1/K.
    let data = ["--set", "data.mean_scale=0", "--set", "data.test_per_class=40"];
    ok(out, &[&data[..], &["gen"]].concat());
    let train = out.join("train.ltds");
    let test = out.join("test.ltds");
    assert!(train.exists() && test.exists());
    let train_key = format!("data.train_path={:?}", train.to_str().unwrap());
    let test_key = format!("data.test_path={:?}", test.to_str().unwrap());
    ok(out, &["--set", &train_key, "--set", &test_key, "--set", "stage1.epochs=0", "train"]);
    ok(out, &["eval", "--checkpoint", out.join("stage1.json").to_str().unwrap(), "--data", test.to_str().unwrap()]);
    let acc = report_accuracy(&out.join("eval_report.json"));
    let (k, n) = (30.0, 30.0 * 40.0);
    let p: f64 = 1.0 / k;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "accuracy {acc} vs chance {p} (3 sigma = {})", 3.0 * sigma);
}

#[test]
fn calibration_with_everything_off_matches_plain_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &with_small(&["train"]));
    let ck = out.join("stage1.json");
    ok(out, &with_small(&[
        "--set", "align.magnitude=false",
        "--set", "align.margin=false",
        "--set", "align.reweight=false",
        "calibrate", "--checkpoint", ck.to_str().unwrap(),
    ]));
    ok(out, &with_small(&["eval", "--checkpoint", ck.to_str().unwrap()]));
    assert_eq!(metrics(&out.join("disalign_report.json")), metrics(&out.join("eval_report.json")));
    assert_eq!(metrics(&out.join("stage1_report.json")), metrics(&out.join("eval_report.json")));
}

#[test]
fn every_subcommand_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &with_small(&["gen", "--csv"]));
    ok(out, &with_small(&["train"]));
    let ck = out.join("stage1.json");
    let ck = ck.to_str().unwrap();
    ok(out, &with_small(&["calibrate", "--checkpoint", ck]));
    for m in ["crt", "lws", "tau-norm", "ncm", "logit-adjust", "tde"] {
        let stdout = ok(out, &with_small(&["baseline", "--method", m, "--checkpoint", ck]));
        assert!(stdout.contains("balanced_accuracy"), "{m}: {stdout}");
    }
    ok(out, &with_small(&["sweep-rho", "--checkpoint", ck]));
    ok(out, &with_small(&["bound-study"]));
    ok(out, &with_small(&["weight-curve"]));
    for f in [
        "config.toml", "train.ltds", "test.ltds", "train.csv", "test.csv", "stage1.json",
        "stage1_trace.csv", "stage1_report.json", "stage1_report.csv", "disalign.json",
        "stage2_trace.csv", "disalign_report.json", "baseline_crt_report.json",
        "baseline_logit_adjust_report.csv", "sweep_rho.csv", "bound_study.csv", "weight_curve.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let trace = fs::read_to_string(out.join("stage1_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,loss,lr\n"));
    assert_eq!(trace.lines().count(), 21);
    let sweep = fs::read_to_string(out.join("sweep_rho.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 6);
    let bound = fs::read_to_string(out.join("bound_study.csv")).unwrap();
    assert_eq!(bound.lines().count(), 4);
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        ok(dir, &with_small(&["--seed", "5", "calibrate"]));
    }
    for f in ["disalign_report.json", "disalign.json", "stage2_trace.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_flags_are_layered() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "seed = 1\ndata.num_classes = 5\ndata.feature_dim = 3\ndata.max_count = 30\n").unwrap();
    ok(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "9", "--set", "data.feature_dim=4", "gen"]);
    let written = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(written.contains("seed = 9"));
    assert!(written.contains("num_classes = 5"));
    assert!(written.contains("feature_dim = 4"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let o = disalign(out, &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("unrecognized subcommand"), "{e}");
    assert!(e.contains("Usage:"), "{e}");

    let o = disalign(out, &["--set", "stage9.lr0=1", "train"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert_eq!(e.trim().lines().count(), 1, "{e}");
    assert!(e.contains("stage9"), "{e}");

    let bad = out.join("bad.ltds");
    fs::write(&bad, b"LTDS\x01\x00\x00\x00\x05").unwrap();
    let key = format!("data.train_path={:?}", bad.to_str().unwrap());
    let o = disalign(out, &["--set", &key, "train"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert_eq!(e.trim().lines().count(), 1, "{e}");
    assert!(e.contains("offset 8"), "{e}");

    let o = disalign(out, &["baseline", "--method", "nope"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope"));
}
