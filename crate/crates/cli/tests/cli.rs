use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conformal_reach::model::{argmax, LogitTensor};
use conformal_reach::perturb::{build_darkening, DARKENING_THRESHOLD};
use conformal_reach::toy::synthetic_segmentation;
use conformal_reach::verify::baseline_mask;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_conformal-reach"));
    c.env_remove("CONFORMAL_REACH_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic model and image written by `synth`.
fn synth(dir: &Path) -> (PathBuf, PathBuf) {
    ok(&["synth", "--out", s(&dir.join("synth"))]);
    (dir.join("synth/model.mlp"), dir.join("synth/image.f64"))
}

fn verify(model: &Path, image: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["verify", "--model", s(model), "--image", s(image), "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
    json(&out.join("summary.json"))
}

#[test]
fn guarantee_prints_confidence() {
    let out = ok(&["guarantee", "--m", "100000", "--ell", "99999", "--epsilon", "1e-4"]);
    assert!(out.contains("delta2         0.99950080"), "{out}");
    let out = ok(&["guarantee", "--m", "8000", "--ell", "7999", "--epsilon", "1e-3"]);
    let line = out.lines().find(|l| l.starts_with("delta2")).unwrap();
    let d2: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((d2 - 0.997).abs() < 1e-3);
    assert!(out.contains("beta variance  3.123"), "{out}");
}

#[test]
fn usage_and_data_errors_have_stable_exit_codes() {
    assert_eq!(run(&["guarantee", "--ell", "0"]).status.code(), Some(2));
    assert_eq!(run(&["guarantee", "--m", "10", "--ell", "11"]).status.code(), Some(2));
    assert_eq!(run(&["guarantee", "--epsilon", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mlp");
    let code = run(&["verify", "--model", s(&missing), "--image", s(&missing), "--out", s(dir.path())]).status.code();
    assert_eq!(code, Some(3));

    // A model whose input size does not match the image.
    let (_, image) = synth(dir.path());
    let wrong = dir.path().join("wrong.mlp");
    conformal_reach::MlpNetwork::random(&[5, 3], 1).unwrap().save(&wrong).unwrap();
    let code = run(&["verify", "--model", s(&wrong), "--image", s(&image), "--out", s(&dir.path().join("v"))]).status.code();
    assert_eq!(code, Some(3));
}

#[test]
fn zero_width_attack_is_fully_robust() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = synth(dir.path());
    let summary = verify(&model, &image, &dir.path().join("v"), &["--attack", "linf", "--e", "0", "--m", "500", "--ell", "500"]);
    assert_eq!(summary["rv"], 100.0);
}

fn grid_rv(e: f64) -> f64 {
    let (model, image) = synthetic_segmentation().unwrap();
    let spec = build_darkening(image, 1.0, DARKENING_THRESHOLD, e, 0).unwrap();
    let base = baseline_mask(&model, &spec).unwrap();
    let (lo, hi) = (spec.lambda_lower(), spec.lambda_upper());
    let mut flipped = [false; 16];
    for i in 0..101 {
        for j in 0..101 {
            let at = |k: usize, s: usize| (lo[k] + (hi[k] - lo[k]) * s as f64 / 100.0).min(hi[k]);
            let x = spec.apply(&[at(0, i), at(1, j)]).unwrap();
            let y = LogitTensor::from_flat(4, 4, model.infer(x.flatten()).unwrap()).unwrap();
            for (p, f) in flipped.iter_mut().enumerate() {
                *f |= argmax(y.pixel(p / 4, p % 4)).0 != base.classes[p];
            }
        }
    }
    100.0 * flipped.iter().filter(|f| !**f).count() as f64 / 16.0
}

#[test]
fn synthetic_rv_matches_grid_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = synth(dir.path());
    let summary = verify(&model, &image, &dir.path().join("v"), &["--e", "0.1"]);
    assert_eq!(summary["rv"].as_f64().unwrap(), grid_rv(0.1));
    let status = std::fs::read(dir.path().join("v/status.pgm")).unwrap();
    assert!(status.starts_with(b"P5\n4 4\n255\n"));
}

#[test]
fn reruns_and_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = synth(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    verify(&model, &image, &a, &["--mode", "surrogate", "--seed", "4"]);
    let mut args = vec!["--threads", "2", "verify", "--model", s(&model), "--image", s(&image), "--out", s(&b)];
    args.extend_from_slice(&["--mode", "surrogate", "--seed", "4"]);
    ok(&args);
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["config_digest"], mb["config_digest"]);
    for f in ["status.pgm", "summary.json", "intervals.bin", "perturbation.json", "surrogate/hull.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let replay = dir.path().join("r");
    let out = bin()
        .env("CONFORMAL_REACH_THREADS", "3")
        .args(["replay", "--manifest", s(&a.join("manifest.json")), "--out", s(&replay)])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&replay.join("manifest.json"))["threads"], 3);

    // A tampered output is reported as a data error.
    let mut manifest = ma.clone();
    manifest["outputs"]["status.pgm"] = Value::String("0".repeat(64));
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_vec(&manifest).unwrap()).unwrap();
    let code = run(&["replay", "--manifest", s(&tampered), "--out", s(&dir.path().join("t"))]).status.code();
    assert_eq!(code, Some(3));
}

fn sweep_rows(csv: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn sweep_points_match_verify_and_widening_never_helps() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = synth(dir.path());
    let summary = verify(&model, &image, &dir.path().join("v"), &["--e", "0.2"]);
    let out = dir.path().join("sw");
    ok(&["sweep", "--model", s(&model), "--image", s(&image), "--param", "e", "--value", "0.2", "--out", s(&out)]);
    let rows = sweep_rows(&out.join("sweep.csv"));
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), summary["rv"].as_f64().unwrap());
    assert!(out.join("sweep_runtime.csv").exists());

    // Growing ℓ∞ balls on a network that is linear on the image: the mean RV
    // cannot increase.
    let out = dir.path().join("radii");
    ok(&[
        "sweep", "--model", s(&model), "--image", s(&image), "--image", s(&image), "--attack", "linf",
        "--param", "e", "--value", "0,0.02,0.05,0.1,0.2,0.4", "--out", s(&out),
    ]);
    let rv: Vec<f64> = sweep_rows(&out.join("sweep.csv")).iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(rv[0], 100.0);
    assert!(rv.windows(2).all(|w| w[1] <= w[0]), "{rv:?}");

    // A failing image is recorded and the sweep goes on.
    let out = dir.path().join("partial");
    ok(&["sweep", "--model", s(&model), "--image", s(&image), "--param", "fraction", "--value", "0.5,1.5", "--out", s(&out)]);
    let rows = sweep_rows(&out.join("sweep.csv"));
    assert_eq!(rows[0][3], "1");
    assert_eq!(rows[1][3], "0");
    assert!(rows[1][5].contains("fraction"));

    let code = run(&["sweep", "--model", s(&model), "--param", "e", "--value", "1", "--out", s(&out)]).status.code();
    assert_eq!(code, Some(2));
}

#[test]
fn audit_recomputes_from_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = synth(dir.path());
    let run_dir = dir.path().join("v");
    verify(&model, &image, &run_dir, &[]);
    ok(&["audit", "--run-dir", s(&run_dir), "--samples", "20000", "--seed", "5"]);
    let report = json(&run_dir.join("audit/audit.json"));
    let eps_hat = report["eps_hat"].as_f64().unwrap();
    assert!(eps_hat <= 0.01);
    if eps_hat == 0.0 {
        assert!(report["bound_ratio"].as_f64().unwrap() <= 1.0 + 1e-9);
    }
    let again = dir.path().join("again");
    ok(&["audit", "--run-dir", s(&run_dir), "--samples", "20000", "--seed", "5", "--out", s(&again)]);
    assert_eq!(
        std::fs::read(run_dir.join("audit/audit.json")).unwrap(),
        std::fs::read(again.join("audit.json")).unwrap()
    );
    let single = dir.path().join("single");
    ok(&["audit", "--run-dir", s(&run_dir), "--samples", "1", "--out", s(&single)]);
    let e = json(&single.join("audit.json"))["eps_hat"].as_f64().unwrap();
    assert!(e == 0.0 || e == 1.0);

    let code = run(&["audit", "--run-dir", s(dir.path()), "--samples", "10"]).status.code();
    assert_eq!(code, Some(3));
}

#[test]
fn small_toy_is_quick_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let toy = |out: &Path, threads: &str| {
        let start = std::time::Instant::now();
        ok(&[
            "--threads", threads, "toy", "--depth", "5", "--width", "20", "--in", "16", "--m", "2000", "--ell", "1995",
            "--epsilon", "0.005", "--t", "500", "--hull-t", "200", "--tprime", "500", "--validation", "20000",
            "--seed", "7", "--out", s(out),
        ]);
        assert!(start.elapsed().as_secs() < 60);
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    toy(&a, "1");
    toy(&b, "2");
    for f in ["report.json", "points.csv", "outlines.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = json(&a.join("report.json"));
    for which in ["naive", "surrogate"] {
        assert!(report[which]["outside_fraction"].as_f64().unwrap() < 0.02);
    }
    let outlines = std::fs::read_to_string(a.join("outlines.csv")).unwrap();
    assert_eq!(outlines.lines().count(), 1 + 3 * 5);
}
